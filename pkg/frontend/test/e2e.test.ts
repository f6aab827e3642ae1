// End-to-end contract checks against a live scripted service instance.
// Spawns the real server process, drives it with the real widgets in a DOM,
// and asserts each widget mode's emitted string parses into the intended
// feedback kind on the server side.

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Client } from "../src/api.js";
import { SessionController, type AppDom } from "../src/app.js";
import { answerControls } from "../src/widgets.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const REPO_ROOT = path.resolve(HERE, "../..");
const FIXTURES = path.join(REPO_ROOT, "fixtures");
const PLAYBOOKS = path.join(FIXTURES, "playbooks", "flat_five.json");
const FULL_TREE = path.join(FIXTURES, "trees", "flat_five.json");
const TWO_LEFT_TREE = path.join(HERE, "..", "e2e", "tree_two_left.json");

const PORT_FULL = 8900 + (process.pid % 50) * 2;
const PORT_TWO = PORT_FULL + 1;
const BASE_FULL = `http://127.0.0.1:${PORT_FULL}`;
const BASE_TWO = `http://127.0.0.1:${PORT_TWO}`;

const servers: ChildProcessWithoutNullStreams[] = [];
const tempDirs: string[] = [];

function startServer(initTree: string, port: number): ChildProcessWithoutNullStreams {
  const store = mkdtempSync(path.join(tmpdir(), "ui-e2e-"));
  tempDirs.push(store);
  const proc = spawn(
    "python3",
    [
      "-m",
      "oversight.cli",
      "serve",
      "--store",
      store,
      "--playbooks",
      PLAYBOOKS,
      "--init-tree",
      initTree,
      "--port",
      String(port),
    ],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  servers.push(proc);
  return proc;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

async function waitReady(base: string): Promise<void> {
  const deadline = Date.now() + 45_000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${base}/v1/sessions/not-a-session`);
      if (response.status === 404) return;
    } catch {
      // server not listening yet
    }
    await sleep(150);
  }
  throw new Error(`service at ${base} did not become ready`);
}

async function waitFor(predicate: () => boolean, what: string): Promise<void> {
  const deadline = Date.now() + 20_000;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await sleep(25);
  }
  throw new Error(`timed out waiting for ${what}`);
}

/** Render the real widget for a question and run one scripted interaction. */
function emitThroughWidget(question: string, interact: (root: HTMLElement) => void): string {
  let emitted: string | null = null;
  const root = answerControls(question, (answer) => {
    emitted = answer;
  });
  document.body.append(root);
  interact(root);
  root.remove();
  if (emitted === null) throw new Error("widget interaction produced no answer");
  return emitted;
}

const clickIn = (root: HTMLElement, selector: string): void => {
  const node = root.querySelector<HTMLElement>(selector);
  if (!node) throw new Error(`no element matches ${selector}`);
  node.click();
};

beforeAll(async () => {
  startServer(FULL_TREE, PORT_FULL);
  startServer(TWO_LEFT_TREE, PORT_TWO);
  await Promise.all([waitReady(BASE_FULL), waitReady(BASE_TWO)]);
});

afterAll(() => {
  for (const proc of servers) proc.kill("SIGTERM");
  for (const dir of tempDirs) rmSync(dir, { recursive: true, force: true });
});

describe("widget-to-service grammar contract", () => {
  it("each widget mode parses into its intended feedback kind", async () => {
    const client = new Client(BASE_FULL);
    const created = await client.createSession(
      "A website template marketplace for people without technical skills.",
    );
    const sessionId = created.session_id;

    interface Plan {
      mode: string;
      interact: (root: HTMLElement) => void;
      kind: string;
      payload?: string[];
      confidence: number | null;
    }
    const plans: Plan[] = [
      {
        mode: "selection card",
        interact: (root) => {
          clickIn(root, '.option-card[data-label="A"]');
          clickIn(root, ".submit-answer");
        },
        kind: "selection",
        payload: ["A"],
        confidence: 0.8,
      },
      {
        mode: "drag ranking",
        interact: (root) => {
          clickIn(root, ".mode-rank");
          const items = root.querySelectorAll<HTMLElement>(".rank-item");
          items[2]!.dispatchEvent(new Event("dragstart", { bubbles: true }));
          items[1]!.dispatchEvent(new Event("drop", { bubbles: true }));
          clickIn(root, ".submit-answer");
        },
        kind: "ranking",
        payload: ["A", "C", "B"],
        confidence: 0.8,
      },
      {
        mode: "confidence slider",
        interact: (root) => {
          const slider = root.querySelector<HTMLInputElement>(".confidence-slider")!;
          slider.value = "0.65";
          slider.dispatchEvent(new Event("input"));
          clickIn(root, '.option-card[data-label="B"]');
          clickIn(root, ".submit-answer");
        },
        kind: "selection",
        payload: ["B"],
        confidence: 0.65,
      },
      {
        mode: "DontCare button",
        interact: (root) => clickIn(root, ".dont-care"),
        kind: "dont_care",
        payload: [],
        confidence: null,
      },
      {
        mode: "DontKnow button",
        interact: (root) => clickIn(root, ".dont-know"),
        kind: "dont_know",
        payload: [],
        confidence: null,
      },
    ];

    for (const plan of plans) {
      let signal = await client.next(sessionId);
      while (signal.kind === "node_complete") signal = await client.next(sessionId);
      expect(signal.kind).toBe("question");
      const answer = emitThroughWidget(signal.question!, plan.interact);
      const result = await client.answer(sessionId, signal.node_path!, answer);
      const parsed = result.parsed_feedback;
      expect(parsed.kind, `${plan.mode} -> ${answer}`).toBe(plan.kind);
      if (plan.payload) expect(parsed.payload).toEqual(plan.payload);
      expect(parsed.confidence).toBe(plan.confidence);
    }

    // Drain the remaining folds; the session must land on all_complete.
    let signal = await client.next(sessionId);
    while (signal.kind === "node_complete") signal = await client.next(sessionId);
    expect(signal.kind).toBe("all_complete");
    const prd = await client.prd(sessionId, false);
    expect(prd.prd_text).toContain("Product Overview");
  });
});

describe("two-node session through the full UI", () => {
  function mountSkeleton(): AppDom {
    document.body.textContent = "";
    const make = (id: string) => {
      const node = document.createElement("div");
      node.id = id;
      document.body.append(node);
      return node;
    };
    return {
      answerArea: make("answer"),
      treeView: make("tree"),
      prdPane: make("prd"),
      progressStrip: make("strip"),
      statusLine: make("status"),
      log: make("log"),
    };
  }

  it("completes both remaining nodes and renders the final document", async () => {
    const dom = mountSkeleton();
    const controller = new SessionController(new Client(BASE_TWO), dom);

    await controller.start(
      "A website template marketplace for people without technical skills.",
    );
    await waitFor(() => controller.state === "awaiting_answer", "first question");
    expect(controller.currentNode).toEqual(["User Experience Design"]);
    expect(dom.treeView.querySelectorAll(".badge.processed").length).toBe(3);

    clickIn(dom.answerArea, '.option-card[data-label="A"]');
    clickIn(dom.answerArea, ".submit-answer");
    await waitFor(
      () => controller.state === "awaiting_answer" && controller.currentNode?.[0] === "Business Rules",
      "second question",
    );
    expect(dom.log.querySelectorAll(".log-entry").length).toBe(1);

    clickIn(dom.answerArea, ".mode-rank");
    clickIn(dom.answerArea, ".submit-answer");
    await waitFor(() => controller.state === "done", "session completion");

    expect(dom.log.querySelectorAll(".log-entry").length).toBe(2);
    expect(dom.prdPane.hidden).toBe(false);
    const prdText = dom.prdPane.textContent ?? "";
    expect(prdText).toContain("User Experience Design");
    expect(prdText).toContain("Business Rules");
    expect(dom.treeView.querySelectorAll(".badge.processed").length).toBe(5);
    expect(dom.answerArea.textContent).toBe("");
    expect(dom.statusLine.textContent).toBe("Done");
  });
});
