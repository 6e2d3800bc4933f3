// The authoring surface: material intake, plan review with revision cues,
// node-graph dialogue editing, suggestion chips, playthrough preview, and
// export download. All dialogue content flows through HealthDialClient to
// the configured service and nowhere else; node positions are presentation
// state kept in localStorage.

import { ApiError, HealthDialClient, newClientId } from "./api.js";
import { withRollback } from "./optimistic.js";
import {
  applyCommandLocally,
  buildGraph,
  NODE_WIDTH,
  type GraphViewModel,
} from "./viewmodel.js";
import { END, type EditCommand, type PlayDto, type ProjectDto } from "./types.js";

interface AppState {
  client: HealthDialClient;
  projectId: string | null;
  project: ProjectDto | null;
  activeSession: string | null;
  graph: GraphViewModel | null;
  play: PlayDto | null;
  cueDirty: boolean;
  status: string;
}

const state: AppState = {
  client: new HealthDialClient(localStorage.getItem("healthdial.base") ?? "http://127.0.0.1:8077"),
  projectId: null,
  project: null,
  activeSession: null,
  graph: null,
  play: null,
  cueDirty: false,
  status: "",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function setStatus(text: string, isError = false) {
  state.status = text;
  const bar = document.getElementById("status")!;
  bar.textContent = text;
  bar.className = isError ? "status error" : "status";
}

function reportError(error: unknown) {
  if (error instanceof ApiError) {
    setStatus(`${error.code}: ${error.message}`, true);
  } else {
    setStatus(String(error), true);
  }
}

// -- positions (presentation only, client side) ------------------------------

function positionsKey(): string {
  return `healthdial.pos.${state.projectId}.${state.activeSession}`;
}

function loadPositions(): Map<string, { x: number; y: number }> {
  try {
    const raw = localStorage.getItem(positionsKey());
    if (!raw) return new Map();
    return new Map(Object.entries(JSON.parse(raw) as Record<string, { x: number; y: number }>));
  } catch {
    return new Map();
  }
}

function savePositions() {
  if (!state.graph) return;
  const record: Record<string, { x: number; y: number }> = {};
  for (const node of state.graph.nodes) record[node.id] = { x: node.x, y: node.y };
  localStorage.setItem(positionsKey(), JSON.stringify(record));
}

// -- data flow ----------------------------------------------------------------

async function refresh(): Promise<void> {
  if (!state.projectId) return;
  state.project = await state.client.getProject(state.projectId);
  if (state.activeSession && !state.project.fsms[state.activeSession]) {
    state.activeSession = null;
  }
  if (!state.activeSession) {
    state.activeSession = Object.keys(state.project.fsms).sort()[0] ?? null;
  }
  state.graph = state.activeSession
    ? buildGraph(state.project.fsms[state.activeSession]!, loadPositions())
    : null;
  render();
}

async function sendCommand(command: EditCommand): Promise<void> {
  if (!state.projectId) return;
  const projectId = state.projectId;
  try {
    await withRollback(
      () => state.graph,
      (graph) => {
        state.graph = graph;
        renderGraph();
      },
      (graph) => (graph ? applyCommandLocally(graph, command) : graph),
      () => state.client.applyEdit(projectId, command),
      () => refresh(),
    );
    setStatus(`applied ${command.kind}`);
  } catch (error) {
    reportError(error);
  }
}

// -- sections -------------------------------------------------------------------

function render(): void {
  renderMaterial();
  renderPlan();
  renderSessionTabs();
  renderGraph();
  renderToolbar();
}

function renderMaterial(): void {
  const section = document.getElementById("material")!;
  section.replaceChildren();
  if (state.project) {
    section.append(
      el("h2", {}, `Project: ${state.project.title}`),
      el("p", { class: "muted" }, `material source: ${state.project.material_source}`),
    );
    return;
  }
  const title = el("input", { id: "title", placeholder: "Project title" });
  const paste = el("textarea", {
    id: "paste",
    rows: "8",
    placeholder: "Paste patient education material here...",
  });
  const file = el("input", { type: "file", accept: ".txt,text/plain" });
  const create = el("button", {}, "Create project");
  create.addEventListener("click", async () => {
    try {
      const text = (paste as HTMLTextAreaElement).value;
      const picked = (file as HTMLInputElement).files?.[0];
      if (picked) {
        const content = await picked.text();
        state.projectId = await state.client.createProjectFromFile(
          (title as HTMLInputElement).value || picked.name,
          picked.name,
          content,
        );
      } else {
        state.projectId = await state.client.createProject((title as HTMLInputElement).value, text);
      }
      setStatus(`created ${state.projectId}`);
      await refresh();
    } catch (error) {
      reportError(error);
    }
  });
  section.append(
    el("h2", {}, "Material"),
    title,
    paste,
    el("div", { class: "row" }, "or import a text file: ", file),
    create,
  );
}

function renderPlan(): void {
  const section = document.getElementById("plan")!;
  section.replaceChildren();
  if (!state.project) return;
  const project = state.project;

  const heading = el("h2", {}, "Session plan");
  section.append(heading);

  const convert = el(
    "button",
    {},
    project.plan ? "Convert to Topics (re-plan)" : "Convert to Topics",
  );
  convert.addEventListener("click", async () => {
    try {
      setStatus("planning...");
      await state.client.plan(state.projectId!);
      await refresh();
      setStatus("plan ready");
    } catch (error) {
      reportError(error);
    }
  });
  section.append(convert);

  if (!project.plan) {
    section.append(el("p", { class: "muted" }, "No plan yet."));
    return;
  }

  const list = el("ol", { class: "topics" });
  for (const session of project.plan.sessions) {
    const rename = el("button", { class: "small" }, "rename");
    rename.addEventListener("click", () => {
      const title = window.prompt("New topic title", session.topic);
      if (title && title !== session.topic) {
        void sendTopicCommand({
          kind: "rename-topic",
          payload: { session_id: session.id, title },
        });
      }
    });
    const remove = el("button", { class: "small danger" }, "delete");
    remove.addEventListener("click", () => {
      if (
        window.confirm(
          `Delete session "${session.topic}"? Its dialogue is deleted with it.`,
        )
      ) {
        void sendTopicCommand({ kind: "delete-topic", payload: { session_id: session.id } });
      }
    });
    const up = el("button", { class: "small" }, "up");
    up.addEventListener("click", () => {
      const order = project.plan!.sessions.map((s) => s.id);
      const index = order.indexOf(session.id);
      if (index > 0) {
        [order[index - 1], order[index]] = [order[index]!, order[index - 1]!];
        void sendTopicCommand({ kind: "reorder-topics", payload: { order } });
      }
    });
    list.append(
      el(
        "li",
        {},
        el("strong", {}, session.topic),
        el("span", { class: "muted" }, ` (${session.key_points.length} key points) `),
        rename,
        up,
        remove,
      ),
    );
  }
  section.append(list);

  const cue = el("input", { id: "cue", placeholder: "Revision cue, e.g. merge sessions 2 and 3" });
  cue.addEventListener("input", () => {
    state.cueDirty = (cue as HTMLInputElement).value.trim().length > 0;
    cueButton.classList.toggle("dirty", state.cueDirty);
  });
  const cueButton = el("button", {}, "Revise plan with cue");
  cueButton.addEventListener("click", async () => {
    const text = (cue as HTMLInputElement).value.trim();
    if (!text) return;
    try {
      setStatus("revising plan...");
      await state.client.plan(state.projectId!, text);
      state.cueDirty = false;
      await refresh();
      setStatus("plan revised");
    } catch (error) {
      reportError(error);
    }
  });
  section.append(el("div", { class: "row" }, cue, cueButton));

  const approve = el("button", {}, project.plan_approved ? "Plan approved" : "Approve plan");
  if (project.plan_approved) approve.setAttribute("disabled", "true");
  approve.addEventListener("click", async () => {
    try {
      await state.client.approvePlan(state.projectId!);
      await refresh();
    } catch (error) {
      reportError(error);
    }
  });
  const generateAll = el("button", {}, "Convert Topics to Conversations");
  generateAll.addEventListener("click", async () => {
    try {
      for (const session of project.plan!.sessions) {
        setStatus(`generating ${session.id}...`);
        await state.client.generate(state.projectId!, session.id);
      }
      await refresh();
      setStatus("all sessions generated");
    } catch (error) {
      reportError(error);
    }
  });
  section.append(el("div", { class: "row" }, approve, generateAll));
}

async function sendTopicCommand(command: EditCommand): Promise<void> {
  try {
    await state.client.applyEdit(state.projectId!, command);
    await refresh();
  } catch (error) {
    reportError(error);
  }
}

function renderSessionTabs(): void {
  const tabs = document.getElementById("tabs")!;
  tabs.replaceChildren();
  if (!state.project?.plan) return;
  for (const session of state.project.plan.sessions) {
    const has = Boolean(state.project.fsms[session.id]);
    const tab = el(
      "button",
      { class: `tab${session.id === state.activeSession ? " active" : ""}` },
      `${session.topic}${has ? "" : " (not generated)"}`,
    );
    if (has) {
      tab.addEventListener("click", () => {
        state.activeSession = session.id;
        void refresh();
      });
    } else {
      tab.setAttribute("disabled", "true");
    }
    tabs.append(tab);
  }
}

function renderToolbar(): void {
  const bar = document.getElementById("toolbar")!;
  bar.replaceChildren();
  if (!state.project) return;
  const project = state.project;

  const undo = el("button", {}, "Undo");
  if (!project.can_undo) undo.setAttribute("disabled", "true");
  undo.addEventListener("click", async () => {
    try {
      await state.client.undo(state.projectId!);
      await refresh();
    } catch (error) {
      reportError(error);
    }
  });
  const redo = el("button", {}, "Redo");
  if (!project.can_redo) redo.setAttribute("disabled", "true");
  redo.addEventListener("click", async () => {
    try {
      await state.client.redo(state.projectId!);
      await refresh();
    } catch (error) {
      reportError(error);
    }
  });

  const exportButton = el("button", {}, "Export .hdfsm");
  exportButton.addEventListener("click", async () => {
    try {
      const text = await state.client.exportDocument(state.projectId!);
      const blob = new Blob([text], { type: "text/plain;charset=utf-8" });
      const link = el("a", {
        href: URL.createObjectURL(blob),
        download: `${state.projectId}.hdfsm`,
      });
      link.click();
      URL.revokeObjectURL(link.getAttribute("href")!);
    } catch (error) {
      reportError(error);
    }
  });

  const playButton = el("button", {}, "Preview play");
  if (!state.activeSession) playButton.setAttribute("disabled", "true");
  playButton.addEventListener("click", () => void openPlay());

  const addState = el("button", {}, "Add state");
  if (!state.activeSession) addState.setAttribute("disabled", "true");
  addState.addEventListener("click", () => {
    const utterance = window.prompt("Agent utterance for the new state");
    if (!utterance) return;
    void sendCommand({
      kind: "add-state",
      payload: { session_id: state.activeSession, state_id: newClientId("st-"), utterance },
    });
  });

  bar.append(
    undo,
    redo,
    addState,
    playButton,
    exportButton,
    el("span", { class: "muted" }, ` revisions: ${project.revision_count}`),
  );
}

// -- graph canvas ---------------------------------------------------------------

const SVG_NS = "http://www.w3.org/2000/svg";
let dragging: { nodeId: string; dx: number; dy: number } | null = null;
let connecting: { stateId: string; optionId: string } | null = null;

function svgEl(tag: string, attrs: Record<string, string> = {}): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  return node;
}

function renderGraph(): void {
  const host = document.getElementById("graph")!;
  host.replaceChildren();
  if (!state.graph) {
    host.append(el("p", { class: "muted" }, "Generate a session to edit its dialogue."));
    return;
  }
  const graph = state.graph;
  const width = Math.max(900, ...graph.nodes.map((n) => n.x + NODE_WIDTH + 80));
  const height = Math.max(500, ...graph.nodes.map((n) => n.y + 160));
  const svg = svgEl("svg", {
    width: String(width),
    height: String(height),
    viewBox: `0 0 ${width} ${height}`,
  }) as SVGSVGElement;

  const defs = svgEl("defs");
  const marker = svgEl("marker", {
    id: "arrow",
    viewBox: "0 0 10 10",
    refX: "9",
    refY: "5",
    markerWidth: "7",
    markerHeight: "7",
    orient: "auto-start-reverse",
  });
  marker.append(svgEl("path", { d: "M 0 0 L 10 5 L 0 10 z", fill: "#5b7a9d" }));
  defs.append(marker);
  svg.append(defs);

  const nodeById = new Map(graph.nodes.map((n) => [n.id, n]));
  for (const edge of graph.edges) {
    const from = nodeById.get(edge.from)!;
    const to = nodeById.get(edge.to)!;
    const optionIndex = from.options.findIndex((o) => o.id === edge.optionId);
    const y1 = from.y + 58 + optionIndex * 22;
    svg.append(
      svgEl("line", {
        x1: String(from.x + NODE_WIDTH),
        y1: String(y1),
        x2: String(to.x),
        y2: String(to.y + 20),
        stroke: "#5b7a9d",
        "stroke-width": "1.5",
        "marker-end": "url(#arrow)",
      }),
    );
  }

  for (const node of graph.nodes) {
    svg.append(renderNode(node));
  }

  svg.addEventListener("mousemove", (event) => {
    if (!dragging || !state.graph) return;
    const node = state.graph.nodes.find((n) => n.id === dragging!.nodeId);
    if (!node) return;
    node.x = event.offsetX - dragging.dx;
    node.y = event.offsetY - dragging.dy;
    renderGraph();
  });
  svg.addEventListener("mouseup", () => {
    if (dragging) {
      dragging = null;
      savePositions();
    }
  });
  host.append(svg);

  if (connecting) {
    const bar = el(
      "div",
      { class: "connect-hint" },
      `Connecting option: click a target state, or `,
    );
    const endButton = el("button", { class: "small" }, "END");
    endButton.addEventListener("click", () => finishConnect(END));
    const cancel = el("button", { class: "small" }, "cancel");
    cancel.addEventListener("click", () => {
      connecting = null;
      renderGraph();
    });
    bar.append(endButton, cancel);
    host.prepend(bar);
  }
}

function finishConnect(target: string): void {
  if (!connecting || !state.activeSession) return;
  const { stateId, optionId } = connecting;
  connecting = null;
  void sendCommand({
    kind: "connect-option",
    payload: { session_id: state.activeSession, state_id: stateId, option_id: optionId, target },
  });
}

function renderNode(node: {
  id: string;
  utterance: string;
  isEntry: boolean;
  options: { id: string; label: string; target: string }[];
  x: number;
  y: number;
}): SVGElement {
  const group = svgEl("g", { transform: `translate(${node.x},${node.y})` });
  const optionRows = node.options.length;
  const boxHeight = 52 + optionRows * 22 + 26;
  const rect = svgEl("rect", {
    width: String(NODE_WIDTH),
    height: String(boxHeight),
    rx: "8",
    class: `node${node.isEntry ? " entry" : ""}`,
  });
  group.append(rect);

  if (node.isEntry) {
    const badge = svgEl("text", { x: "8", y: "14", class: "badge" });
    badge.textContent = "ENTRY";
    group.append(badge);
  }

  const title = svgEl("text", { x: "8", y: node.isEntry ? "30" : "18", class: "node-id" });
  title.textContent = node.id;
  group.append(title);

  const utterance = svgEl("text", { x: "8", y: node.isEntry ? "46" : "36", class: "utterance" });
  utterance.textContent =
    node.utterance.length > 34 ? `${node.utterance.slice(0, 33)}…` : node.utterance;
  group.append(utterance);

  // double-click edits the agent utterance in place
  group.addEventListener("dblclick", (event) => {
    event.stopPropagation();
    const text = window.prompt("Agent utterance", node.utterance);
    if (text && text !== node.utterance) {
      void sendCommand({
        kind: "edit-utterance",
        payload: { session_id: state.activeSession, state_id: node.id, text },
      });
    }
  });

  group.addEventListener("mousedown", (event) => {
    const target = event.target as Element;
    if (target.classList.contains("option-rect") || target.classList.contains("option-label")) {
      return;
    }
    dragging = { nodeId: node.id, dx: event.offsetX - node.x, dy: event.offsetY - node.y };
  });

  group.addEventListener("click", () => {
    if (connecting) finishConnect(node.id);
  });

  node.options.forEach((option, index) => {
    const y = 52 + index * 22;
    const optionRect = svgEl("rect", {
      x: "8",
      y: String(y),
      width: String(NODE_WIDTH - 16),
      height: "18",
      rx: "4",
      class: "option-rect",
    });
    const label = svgEl("text", { x: "14", y: String(y + 13), class: "option-label" });
    const suffix = option.target === END ? " ⇥END" : "";
    label.textContent =
      (option.label.length > 26 ? `${option.label.slice(0, 25)}…` : option.label) + suffix;
    const onDouble = (event: Event) => {
      event.stopPropagation();
      const text = window.prompt("Option label (empty to delete)", option.label);
      if (text === null) return;
      if (text === "") {
        void sendCommand({
          kind: "delete-option",
          payload: { session_id: state.activeSession, state_id: node.id, option_id: option.id },
        });
      } else if (text !== option.label) {
        void sendCommand({
          kind: "edit-option-label",
          payload: {
            session_id: state.activeSession,
            state_id: node.id,
            option_id: option.id,
            label: text,
          },
        });
      }
    };
    optionRect.addEventListener("dblclick", onDouble);
    label.addEventListener("dblclick", onDouble);
    const startConnect = (event: Event) => {
      event.stopPropagation();
      connecting = { stateId: node.id, optionId: option.id };
      renderGraph();
    };
    optionRect.addEventListener("click", startConnect);
    label.addEventListener("click", startConnect);
    group.append(optionRect, label);
  });

  const footerY = 52 + optionRows * 22 + 16;
  const addOption = svgEl("text", { x: "8", y: String(footerY), class: "action" });
  addOption.textContent = "+ option";
  addOption.addEventListener("click", (event) => {
    event.stopPropagation();
    const label = window.prompt("Patient response label");
    if (!label) return;
    void sendCommand({
      kind: "add-option",
      payload: {
        session_id: state.activeSession,
        state_id: node.id,
        option_id: newClientId("op-"),
        label,
        target: END,
      },
    });
  });
  group.append(addOption);

  const suggest = svgEl("text", { x: "80", y: String(footerY), class: "action" });
  suggest.textContent = "✨ suggest";
  suggest.addEventListener("click", (event) => {
    event.stopPropagation();
    void openSuggestions(node.id);
  });
  group.append(suggest);

  if (!node.isEntry) {
    const remove = svgEl("text", {
      x: String(NODE_WIDTH - 20),
      y: String(footerY),
      class: "action danger",
    });
    remove.textContent = "✕";
    remove.addEventListener("click", (event) => {
      event.stopPropagation();
      if (window.confirm(`Delete state "${node.id}"? Options pointing at it are removed.`)) {
        void sendCommand({
          kind: "delete-state",
          payload: { session_id: state.activeSession, state_id: node.id },
        });
      }
    });
    group.append(remove);
  }

  return group;
}

// -- suggestions ------------------------------------------------------------------

async function openSuggestions(stateId: string): Promise<void> {
  if (!state.projectId || !state.activeSession) return;
  const modal = document.getElementById("modal")!;
  modal.replaceChildren(el("div", { class: "card" }, "Asking for suggestions..."));
  modal.classList.add("open");
  try {
    const drafts = await state.client.suggest(state.projectId, state.activeSession, stateId, 3);
    const card = el("div", { class: "card" }, el("h3", {}, "Suggested patient responses"));
    for (const draft of drafts) {
      const accept = el("button", { class: "small" }, "accept → new stub");
      accept.addEventListener("click", () => {
        modal.classList.remove("open");
        void sendCommand({
          kind: "accept-suggestion",
          payload: {
            session_id: state.activeSession,
            state_id: stateId,
            option_id: newClientId("op-"),
            new_state_id: newClientId("st-"),
            label: draft.label,
            attach: "new-stub",
          },
        });
      });
      const reject = el("button", { class: "small" }, "reject");
      reject.addEventListener("click", () => chip.remove());
      const chip = el("div", { class: "chip" }, draft.label, " ", accept, reject);
      card.append(chip);
    }
    const close = el("button", {}, "Close");
    close.addEventListener("click", () => modal.classList.remove("open"));
    card.append(close);
    modal.replaceChildren(card);
  } catch (error) {
    modal.classList.remove("open");
    reportError(error);
  }
}

// -- playthrough preview --------------------------------------------------------------

async function openPlay(): Promise<void> {
  if (!state.projectId || !state.activeSession) return;
  try {
    state.play = await state.client.startPlay(state.projectId, state.activeSession);
    renderPlay();
  } catch (error) {
    reportError(error);
  }
}

function renderPlay(): void {
  const modal = document.getElementById("modal")!;
  const play = state.play;
  if (!play) return;
  const card = el("div", { class: "card play" }, el("h3", {}, "Playthrough preview"));
  const log = el("div", { class: "chat" });
  for (const turn of play.transcript) {
    log.append(el("div", { class: "bubble agent" }, turn.agent));
    if (turn.chosen) log.append(el("div", { class: "bubble patient" }, turn.chosen));
  }
  card.append(log);
  if (play.finished) {
    card.append(el("p", { class: "muted" }, "(conversation finished)"));
  } else {
    const buttons = el("div", { class: "row" });
    play.options.forEach((label, index) => {
      const button = el("button", { class: "small" }, label);
      button.addEventListener("click", async () => {
        try {
          state.play = await state.client.choose(play.play_id, index);
          renderPlay();
        } catch (error) {
          reportError(error);
        }
      });
      buttons.append(button);
    });
    card.append(buttons);
  }
  const close = el("button", {}, "Close");
  close.addEventListener("click", () => {
    state.play = null;
    document.getElementById("modal")!.classList.remove("open");
  });
  card.append(close);
  const modalHost = document.getElementById("modal")!;
  modalHost.replaceChildren(card);
  modalHost.classList.add("open");
}

// -- boot -----------------------------------------------------------------------------

export function boot(): void {
  render();
  setStatus("ready");
}

if (typeof document !== "undefined" && document.getElementById("material")) {
  boot();
}
