// Graph view model: a pure projection of one server dialogue FSM.
//
// Every node and edge maps to a server entity; positions are presentation
// only and never leave the client. The local mirror of edit commands keeps
// the canvas responsive between a mutation and the server round trip; after
// every round trip the projection must structurally equal the refetched
// server FSM (checked in the end-to-end suite).

import { END, type EditCommand, type FsmDto, type OptionDto, type StateDto } from "./types.js";

export interface GraphNode {
  id: string;
  utterance: string;
  isEntry: boolean;
  options: OptionDto[];
  tags: string[];
  x: number;
  y: number;
}

export interface GraphEdge {
  from: string;
  optionId: string;
  label: string;
  to: string; // state id; options to END carry no edge, they render as a badge
}

export interface GraphViewModel {
  sessionId: string;
  entry: string;
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export const NODE_WIDTH = 220;
export const LAYER_GAP = 300;
export const ROW_GAP = 150;

/** Layered positions: breadth-first layers from the entry; states that are
 * unreachable in the current draft go into a trailing layer. */
export function layeredPositions(fsm: FsmDto): Map<string, { x: number; y: number }> {
  const byId = new Map(fsm.states.map((s) => [s.id, s]));
  const layerOf = new Map<string, number>();
  const queue: string[] = [];
  if (byId.has(fsm.entry)) {
    layerOf.set(fsm.entry, 0);
    queue.push(fsm.entry);
  }
  while (queue.length) {
    const current = queue.shift()!;
    const layer = layerOf.get(current)!;
    for (const option of byId.get(current)!.options) {
      if (option.target !== END && byId.has(option.target) && !layerOf.has(option.target)) {
        layerOf.set(option.target, layer + 1);
        queue.push(option.target);
      }
    }
  }
  const maxLayer = Math.max(0, ...layerOf.values());
  const sorted = [...fsm.states].sort((a, b) => a.id.localeCompare(b.id));
  for (const state of sorted) {
    if (!layerOf.has(state.id)) layerOf.set(state.id, maxLayer + 1);
  }

  const rows = new Map<number, number>();
  const positions = new Map<string, { x: number; y: number }>();
  for (const state of sorted) {
    const layer = layerOf.get(state.id)!;
    const row = rows.get(layer) ?? 0;
    rows.set(layer, row + 1);
    positions.set(state.id, { x: 40 + layer * LAYER_GAP, y: 40 + row * ROW_GAP });
  }
  return positions;
}

export function buildGraph(
  fsm: FsmDto,
  manualPositions: Map<string, { x: number; y: number }> = new Map(),
): GraphViewModel {
  const auto = layeredPositions(fsm);
  const nodes: GraphNode[] = [...fsm.states]
    .sort((a, b) => a.id.localeCompare(b.id))
    .map((state) => {
      const position = manualPositions.get(state.id) ?? auto.get(state.id)!;
      return {
        id: state.id,
        utterance: state.utterance,
        isEntry: state.entry,
        options: state.options.map((o) => ({ ...o })),
        tags: [...state.tags],
        x: position.x,
        y: position.y,
      };
    });
  const edges: GraphEdge[] = [];
  for (const node of nodes) {
    for (const option of node.options) {
      if (option.target !== END) {
        edges.push({ from: node.id, optionId: option.id, label: option.label, to: option.target });
      }
    }
  }
  return { sessionId: fsm.session_id, entry: fsm.entry, nodes, edges };
}

/** Content projection used for equality: ids, utterances, entry flags, and
 * ordered option lists; positions are ignored. */
function contentOf(nodes: Iterable<{ id: string; utterance: string; isEntry?: boolean; entry?: boolean; options: OptionDto[] }>) {
  return [...nodes]
    .map((n) => ({
      id: n.id,
      utterance: n.utterance,
      entry: "isEntry" in n && n.isEntry !== undefined ? n.isEntry : Boolean((n as { entry?: boolean }).entry),
      options: n.options.map((o) => ({ id: o.id, label: o.label, target: o.target })),
    }))
    .sort((a, b) => a.id.localeCompare(b.id));
}

/** Structural equality between the client graph and a server FSM. */
export function graphEqualsFsm(view: GraphViewModel, fsm: FsmDto): boolean {
  if (view.sessionId !== fsm.session_id || view.entry !== fsm.entry) return false;
  return JSON.stringify(contentOf(view.nodes)) === JSON.stringify(contentOf(fsm.states));
}

/** Apply an edit command to the projection, mirroring the server semantics
 * for the kinds the canvas issues. Unknown payload targets throw, matching
 * a server rejection. Returns a new view model. */
export function applyCommandLocally(view: GraphViewModel, command: EditCommand): GraphViewModel {
  const payload = command.payload as Record<string, string | boolean | undefined>;
  if (payload["session_id"] !== undefined && payload["session_id"] !== view.sessionId) {
    throw new Error(`command addresses session ${String(payload["session_id"])}, canvas shows ${view.sessionId}`);
  }
  const nodes = view.nodes.map((n) => ({ ...n, options: n.options.map((o) => ({ ...o })) }));
  const node = (id: unknown) => {
    const found = nodes.find((n) => n.id === id);
    if (!found) throw new Error(`no state ${String(id)}`);
    return found;
  };
  let entry = view.entry;

  switch (command.kind) {
    case "edit-utterance": {
      node(payload["state_id"]).utterance = String(payload["text"]);
      break;
    }
    case "add-state": {
      const id = String(payload["state_id"]);
      const makeEntry = Boolean(payload["entry"]);
      nodes.push({
        id,
        utterance: String(payload["utterance"]),
        isEntry: makeEntry,
        options: [],
        tags: [],
        x: 0,
        y: 0,
      });
      if (makeEntry) {
        const old = node(entry);
        old.isEntry = false;
        entry = id;
      }
      break;
    }
    case "delete-state": {
      const id = String(payload["state_id"]);
      if (id === entry) throw new Error("deleting the entry state is refused");
      const index = nodes.findIndex((n) => n.id === id);
      if (index < 0) throw new Error(`no state ${id}`);
      nodes.splice(index, 1);
      for (const n of nodes) {
        n.options = n.options.filter((o) => o.target !== id);
      }
      break;
    }
    case "add-option": {
      const holder = node(payload["state_id"]);
      holder.options.push({
        id: String(payload["option_id"]),
        label: String(payload["label"]),
        target: String(payload["target"]),
      });
      break;
    }
    case "edit-option-label": {
      const holder = node(payload["state_id"]);
      const option = holder.options.find((o) => o.id === payload["option_id"]);
      if (!option) throw new Error(`no option ${String(payload["option_id"])}`);
      option.label = String(payload["label"]);
      break;
    }
    case "delete-option": {
      const holder = node(payload["state_id"]);
      holder.options = holder.options.filter((o) => o.id !== payload["option_id"]);
      break;
    }
    case "connect-option": {
      const holder = node(payload["state_id"]);
      const option = holder.options.find((o) => o.id === payload["option_id"]);
      if (!option) throw new Error(`no option ${String(payload["option_id"])}`);
      option.target = String(payload["target"]);
      break;
    }
    case "accept-suggestion": {
      const holder = node(payload["state_id"]);
      let target: string;
      if (payload["attach"] === "new-stub") {
        target = String(payload["new_state_id"]);
        nodes.push({
          id: target,
          utterance: String(payload["stub_utterance"] ?? "(placeholder: edit this utterance)"),
          isEntry: false,
          options: [],
          tags: [],
          x: 0,
          y: 0,
        });
      } else {
        target = String(payload["target"]);
      }
      holder.options.push({
        id: String(payload["option_id"]),
        label: String(payload["label"]),
        target,
      });
      break;
    }
    default:
      throw new Error(`command kind ${command.kind} does not apply to the canvas`);
  }

  const fsm: FsmDto = {
    session_id: view.sessionId,
    entry,
    states: nodes.map((n) => ({
      id: n.id,
      utterance: n.utterance,
      entry: n.isEntry,
      options: n.options,
      tags: n.tags,
    })),
  };
  const manual = new Map(view.nodes.map((n) => [n.id, { x: n.x, y: n.y }]));
  return buildGraph(fsm, manual);
}
