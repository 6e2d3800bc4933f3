// End-to-end authoring loop against a real service process, driven through
// the same client and view-model layer the UI uses:
// paste -> Convert to Topics -> revise with cue -> approve -> generate all
// -> edit utterance -> Suggest Options + accept -> preview play -> export.
// The exported document must re-parse (proven via server-side import into a
// fresh project) and re-export byte for byte. After every one of 30 scripted
// edits the locally mirrored graph must structurally equal the refetched
// server FSM.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, copyFileSync, readFileSync, mkdirSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HealthDialClient, newClientId } from "../src/api.js";
import { applyCommandLocally, buildGraph, graphEqualsFsm, type GraphViewModel } from "../src/viewmodel.js";
import { END, type EditCommand } from "../src/types.js";

const PIPELINE_FIXTURES = join(__dirname, "..", "..", "tests", "fixtures", "pipeline");

let child: ChildProcess;
let client: HealthDialClient;
let baseUrl: string;

async function freePort(): Promise<number> {
  return await new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

async function waitForService(url: string, timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${url}/projects/warmup-probe`);
      if (response.status === 404) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("service did not come up in time");
}

beforeAll(async () => {
  const workdir = mkdtempSync(join(tmpdir(), "hd-editor-e2e-"));
  const fixtures = join(workdir, "fixtures");
  mkdirSync(fixtures);
  // Consumed in call order: plan, revised plan, three designs, suggestions.
  copyFileSync(join(PIPELINE_FIXTURES, "plan", "01.txt"), join(fixtures, "01-plan.txt"));
  copyFileSync(join(__dirname, "fixtures", "plan-revised.txt"), join(fixtures, "02-plan-revised.txt"));
  copyFileSync(join(PIPELINE_FIXTURES, "design", "01.txt"), join(fixtures, "03-design.txt"));
  copyFileSync(join(PIPELINE_FIXTURES, "design", "02.txt"), join(fixtures, "04-design.txt"));
  copyFileSync(join(PIPELINE_FIXTURES, "design", "03.txt"), join(fixtures, "05-design.txt"));
  copyFileSync(join(__dirname, "fixtures", "suggest.txt"), join(fixtures, "06-suggest.txt"));

  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  child = spawn("healthdial", ["serve"], {
    env: {
      ...process.env,
      HEALTHDIAL_STORE: join(workdir, "store"),
      HEALTHDIAL_FIXTURES: fixtures,
      HEALTHDIAL_LISTEN: `127.0.0.1:${port}`,
    },
    stdio: "ignore",
  });
  await waitForService(baseUrl);
  client = new HealthDialClient(baseUrl);
}, 30000);

afterAll(() => {
  child?.kill("SIGTERM");
});

describe("authoring loop end to end", () => {
  let projectId: string;
  let graph: GraphViewModel;

  async function refetchGraph(sessionId: string): Promise<GraphViewModel> {
    const project = await client.getProject(projectId);
    return buildGraph(project.fsms[sessionId]!);
  }

  async function applyBothSides(command: EditCommand): Promise<void> {
    graph = applyCommandLocally(graph, command);
    await client.applyEdit(projectId, command);
    const project = await client.getProject(projectId);
    const serverFsm = project.fsms[graph.sessionId]!;
    expect(graphEqualsFsm(graph, serverFsm)).toBe(true);
  }

  it("runs paste -> plan -> revise -> generate -> edit -> suggest -> play -> export", async () => {
    const material = readFileSync(join(PIPELINE_FIXTURES, "material.txt"), "utf-8");
    projectId = await client.createProject("Cancer screening", material);
    expect(projectId).toMatch(/^p-/);

    const plan = await client.plan(projectId);
    expect(plan.sessions.map((s) => s.id)).toEqual([
      "what-screening-is",
      "inherited-risk",
      "your-next-steps",
    ]);

    const revised = await client.plan(projectId, "add a point about support resources");
    expect(revised.revision_note).toBe("add a point about support resources");
    expect(revised.sessions[2]!.key_points).toContain(
      "Support resources are available while you decide",
    );

    await client.approvePlan(projectId);
    for (const session of revised.sessions) {
      const generated = await client.generate(projectId, session.id);
      expect(generated.fsm.session_id).toBe(session.id);
    }

    graph = await refetchGraph("what-screening-is");
    expect(graph.entry).toBe("welcome");

    // direct utterance edit, mirrored locally and confirmed against the server
    await applyBothSides({
      kind: "edit-utterance",
      payload: {
        session_id: "what-screening-is",
        state_id: "welcome",
        text: "Hello! Shall we talk about cancer screening?",
      },
    });

    // Suggest Options on the welcome state; one duplicates an existing label
    const drafts = await client.suggest(projectId, "what-screening-is", "welcome", 3);
    expect(drafts.map((d) => d.label)).toEqual([
      "What if I am scared of the results?",
      "How much does screening cost?",
    ]);
    await applyBothSides({
      kind: "accept-suggestion",
      payload: {
        session_id: "what-screening-is",
        state_id: "welcome",
        option_id: newClientId("op-"),
        new_state_id: newClientId("st-"),
        label: drafts[0]!.label,
        attach: "new-stub",
      },
    });

    // preview play: agent speaks first, choices advance deterministically
    let play = await client.startPlay(projectId, "what-screening-is");
    expect(play.transcript[0]!.agent).toBe("Hello! Shall we talk about cancer screening?");
    let guard = 0;
    while (!play.finished && guard < 10) {
      play = await client.choose(play.play_id, 0);
      guard += 1;
    }
    expect(play.finished).toBe(true);

    // export, then prove the download re-parses server-side and re-exports
    // byte for byte through a fresh project
    const exported = await client.exportDocument(projectId);
    expect(exported.startsWith("HEALTHDIAL-FSM v1\n")).toBe(true);
    expect(exported).toBe(await client.exportDocument(projectId));

    const copyId = await client.createProject("Copy", "Imported copy material.");
    await client.importDocument(copyId, exported);
    const reExported = await client.exportDocument(copyId);
    expect(reExported).toBe(exported);
  }, 60000);

  it("keeps the client graph equal to the server FSM across 30 scripted edits", async () => {
    graph = await refetchGraph("what-screening-is");
    const sessionId = "what-screening-is";
    const addedStates: string[] = [];

    for (let i = 0; i < 30; i++) {
      let command: EditCommand;
      switch (i % 6) {
        case 0:
          command = {
            kind: "edit-utterance",
            payload: { session_id: sessionId, state_id: graph.entry, text: `Utterance v${i}` },
          };
          break;
        case 1:
          command = {
            kind: "add-option",
            payload: {
              session_id: sessionId,
              state_id: graph.entry,
              option_id: newClientId("op-"),
              label: `extra choice ${i}`,
              target: END,
            },
          };
          break;
        case 2: {
          const entryNode = graph.nodes.find((n) => n.id === graph.entry)!;
          const last = entryNode.options.at(-1)!;
          command = {
            kind: "edit-option-label",
            payload: {
              session_id: sessionId,
              state_id: graph.entry,
              option_id: last.id,
              label: `renamed choice ${i}`,
            },
          };
          break;
        }
        case 3: {
          const stateId = `st-x${i}`;
          addedStates.push(stateId);
          command = {
            kind: "add-state",
            payload: { session_id: sessionId, state_id: stateId, utterance: `Aside number ${i}` },
          };
          break;
        }
        case 4: {
          const entryNode = graph.nodes.find((n) => n.id === graph.entry)!;
          const last = entryNode.options.at(-1)!;
          command = {
            kind: "connect-option",
            payload: {
              session_id: sessionId,
              state_id: graph.entry,
              option_id: last.id,
              target: addedStates.at(-1) ?? END,
            },
          };
          break;
        }
        default: {
          const victim = addedStates.shift();
          command = victim
            ? { kind: "delete-state", payload: { session_id: sessionId, state_id: victim } }
            : {
                kind: "edit-utterance",
                payload: { session_id: sessionId, state_id: graph.entry, text: `fallback ${i}` },
              };
          break;
        }
      }
      await applyBothSides(command);
    }
  }, 60000);

  it("rolls back the local graph when the server rejects an edit", async () => {
    graph = await refetchGraph("what-screening-is");
    const snapshot = JSON.stringify(graph.nodes);
    const command: EditCommand = {
      kind: "delete-state",
      payload: { session_id: "what-screening-is", state_id: graph.entry },
    };
    // the local mirror refuses exactly like the server does
    expect(() => applyCommandLocally(graph, command)).toThrow();
    await expect(client.applyEdit(projectId, command)).rejects.toMatchObject({
      status: 409,
      code: "would-orphan-entry",
    });
    expect(JSON.stringify(graph.nodes)).toBe(snapshot);
    expect(graphEqualsFsm(graph, (await client.getProject(projectId)).fsms["what-screening-is"]!)).toBe(
      true,
    );
  }, 30000);

  it("reports undo/redo headroom for the toolbar buttons", async () => {
    const before = await client.getProject(projectId);
    expect(before.can_undo).toBe(true);
    const afterUndo = await client.undo(projectId);
    expect(afterUndo.can_redo).toBe(true);
    const afterRedo = await client.redo(projectId);
    expect(afterRedo.can_undo).toBe(true);
    expect(afterRedo.content_hash).toBe(before.content_hash);
  }, 30000);
});
