// Session controller: a state machine over the service endpoints. Strict
// alternation is enforced here — the controller never requests the next
// signal while an answer is pending, and every state change waits for the
// service response (no optimistic updates).

import { Client, type TreeDoc } from "./api.js";
import { renderPrd, renderProgressStrip, type CheckpointScore } from "./prd.js";
import { diffTrees, renderTree } from "./tree.js";
import { answerControls } from "./widgets.js";

export type UiState = "idle" | "advancing" | "awaiting_answer" | "done" | "failed";

export interface AppDom {
  answerArea: HTMLElement;
  treeView: HTMLElement;
  prdPane: HTMLElement;
  progressStrip: HTMLElement;
  statusLine: HTMLElement;
  log: HTMLElement;
}

export class SessionController {
  state: UiState = "idle";
  sessionId: string | null = null;
  currentNode: string[] | null = null;
  private lastTree: TreeDoc | null = null;

  constructor(
    private readonly client: Client,
    private readonly dom: AppDom,
  ) {}

  private setStatus(text: string): void {
    this.dom.statusLine.textContent = text;
  }

  async start(query: string): Promise<void> {
    if (this.sessionId !== null) return;
    this.setStatus("Creating session…");
    try {
      const created = await this.client.createSession(query);
      this.sessionId = created.session_id;
      renderTree(this.dom.treeView, created.tree, null);
      this.lastTree = created.tree;
      await this.advance();
    } catch (err) {
      this.fail(err);
    }
  }

  /** Pull signals until a question needs the user or the session finishes. */
  async advance(): Promise<void> {
    if (this.state !== "idle" || this.sessionId === null) return;
    this.state = "advancing";
    this.setStatus("Working…");
    try {
      for (;;) {
        const signal = await this.client.next(this.sessionId);
        if (signal.kind === "question") {
          this.currentNode = signal.node_path ?? null;
          this.renderQuestion(signal.question ?? "");
          this.state = "awaiting_answer";
          this.setStatus(`Question about: ${(signal.node_path ?? []).join(" > ")}`);
          return;
        }
        if (signal.kind === "node_complete") {
          this.appendLogEntry(signal.node_complete ?? [], signal.summary ?? "");
          await this.refreshTree();
          continue;
        }
        // Stay in "advancing" until the document is on screen, so "done"
        // always means fully rendered.
        this.setStatus("All modules discussed — generating document");
        const prd = await this.client.prd(this.sessionId, false);
        renderPrd(this.dom.prdPane, prd.prd_text);
        await this.refreshTree();
        this.dom.answerArea.textContent = "";
        this.state = "done";
        this.setStatus("Done");
        return;
      }
    } catch (err) {
      this.fail(err);
    }
  }

  async submitAnswer(answer: string): Promise<void> {
    if (this.state !== "awaiting_answer" || this.sessionId === null || this.currentNode === null) {
      return;
    }
    // Block further widget clicks and advance() reentry while in flight.
    this.state = "advancing";
    this.setStatus("Sending answer…");
    try {
      await this.client.answer(this.sessionId, this.currentNode, answer);
      this.currentNode = null;
      this.dom.answerArea.textContent = "";
      this.state = "idle";
      await this.advance();
    } catch (err) {
      this.fail(err);
    }
  }

  renderProgress(checkpoints: CheckpointScore[] | null): void {
    renderProgressStrip(this.dom.progressStrip, checkpoints);
  }

  private renderQuestion(question: string): void {
    this.dom.answerArea.textContent = "";
    this.dom.answerArea.append(
      answerControls(question, (answer) => {
        void this.submitAnswer(answer);
      }),
    );
  }

  private appendLogEntry(nodePath: string[], summary: string): void {
    const entry = document.createElement("div");
    entry.className = "log-entry";
    const title = document.createElement("div");
    title.className = "log-node";
    title.textContent = nodePath.join(" > ");
    const body = document.createElement("pre");
    body.className = "log-summary";
    body.textContent = summary;
    entry.append(title, body);
    this.dom.log.append(entry);
  }

  private async refreshTree(): Promise<void> {
    if (this.sessionId === null) return;
    const view = await this.client.tree(this.sessionId);
    renderTree(this.dom.treeView, view.tree, diffTrees(this.lastTree, view.tree));
    this.lastTree = view.tree;
  }

  private fail(err: unknown): void {
    this.state = "failed";
    const message = err instanceof Error ? err.message : String(err);
    this.setStatus(`Failed: ${message}`);
  }
}
