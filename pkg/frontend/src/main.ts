// Page bootstrap: wire the static skeleton in index.html to the controller.

import { Client } from "./api.js";
import { SessionController, type AppDom } from "./app.js";
import type { CheckpointScore } from "./prd.js";

function must(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id} in page skeleton`);
  return node;
}

async function loadOptionalReport(): Promise<CheckpointScore[] | null> {
  // A benchmark report dropped next to the page lights up the progress strip.
  try {
    const response = await fetch("report.json");
    if (!response.ok) return null;
    const doc = (await response.json()) as {
      cases?: { checkpoints?: CheckpointScore[] }[];
    };
    const checkpoints = doc.cases?.[0]?.checkpoints;
    return checkpoints && checkpoints.length ? checkpoints : null;
  } catch {
    return null;
  }
}

export function bootstrap(): SessionController {
  const dom: AppDom = {
    answerArea: must("answer"),
    treeView: must("tree"),
    prdPane: must("prd"),
    progressStrip: must("strip"),
    statusLine: must("status"),
    log: must("log"),
  };
  const controller = new SessionController(new Client(""), dom);

  const form = must("query-form") as HTMLFormElement;
  const input = must("query") as HTMLInputElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const query = input.value.trim();
    if (query) void controller.start(query);
  });

  void loadOptionalReport().then((checkpoints) => controller.renderProgress(checkpoints));
  return controller;
}

bootstrap();
