// Answer input widgets. A question with a detected option list renders
// click-to-select cards, a drag-or-button ranking mode, and a confidence
// slider; anything else falls back to a free-text box. Refusal buttons are
// always visible. All emission goes through grammar.ts so the strings are
// exactly what the service's parser expects.

import {
  DONT_CARE,
  DONT_KNOW,
  detectOptions,
  emitRanking,
  emitSelection,
  formatConfidence,
  type OptionItem,
} from "./grammar.js";

export type SubmitHandler = (answer: string) => void;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Move one element of a list to a new index, returning a fresh array. */
export function moveItem<T>(items: readonly T[], from: number, to: number): T[] {
  const next = items.slice();
  if (from < 0 || from >= next.length || to < 0 || to >= next.length) return next;
  const [picked] = next.splice(from, 1);
  next.splice(to, 0, picked as T);
  return next;
}

function refusalRow(onSubmit: SubmitHandler): HTMLElement {
  const row = el("div", "refusal-row");
  const dontCare = el("button", "refusal dont-care", "Don't care");
  dontCare.type = "button";
  dontCare.addEventListener("click", () => onSubmit(DONT_CARE));
  const dontKnow = el("button", "refusal dont-know", "Don't know");
  dontKnow.type = "button";
  dontKnow.addEventListener("click", () => onSubmit(DONT_KNOW));
  row.append(dontCare, dontKnow);
  return row;
}

function freeTextBlock(onSubmit: SubmitHandler, expanded: boolean): HTMLElement {
  const block = el("details", "free-text");
  if (expanded) (block as HTMLDetailsElement).open = true;
  const summary = el("summary", undefined, "Answer in your own words");
  const textarea = el("textarea", "free-text-input");
  textarea.rows = 3;
  const send = el("button", "free-text-send", "Send");
  send.type = "button";
  send.addEventListener("click", () => {
    const text = textarea.value.trim();
    if (text) onSubmit(text);
  });
  block.append(summary, textarea, send);
  return block;
}

function optionControls(options: OptionItem[], onSubmit: SubmitHandler): HTMLElement {
  const wrap = el("div", "option-controls");
  let mode: "select" | "rank" = "select";
  let selected: string | null = null;
  let order = options.map((o) => o.label);
  let confidence = 0.8;

  const modeRow = el("div", "mode-row");
  const selectBtn = el("button", "mode-select", "Choose one");
  selectBtn.type = "button";
  const rankBtn = el("button", "mode-rank", "Rank all");
  rankBtn.type = "button";
  modeRow.append(selectBtn, rankBtn);

  const cards = el("div", "option-cards");
  for (const option of options) {
    const card = el("button", "option-card");
    card.type = "button";
    card.dataset["label"] = option.label;
    card.append(el("span", "option-label", option.label), el("span", "option-text", option.text));
    card.addEventListener("click", () => {
      selected = option.label;
      for (const other of Array.from(cards.children)) {
        other.setAttribute("aria-pressed", other === card ? "true" : "false");
      }
      submit.disabled = false;
    });
    card.setAttribute("aria-pressed", "false");
    cards.append(card);
  }

  const rankList = el("ol", "rank-list");
  let dragFrom = -1;
  const renderRank = () => {
    rankList.textContent = "";
    order.forEach((label, index) => {
      const option = options.find((o) => o.label === label)!;
      const item = el("li", "rank-item");
      item.draggable = true;
      item.dataset["label"] = label;
      item.addEventListener("dragstart", () => {
        dragFrom = index;
      });
      item.addEventListener("dragover", (event) => event.preventDefault());
      item.addEventListener("drop", (event) => {
        event.preventDefault();
        if (dragFrom >= 0) {
          order = moveItem(order, dragFrom, index);
          dragFrom = -1;
          renderRank();
        }
      });
      const up = el("button", "rank-up", "↑");
      up.type = "button";
      up.disabled = index === 0;
      up.addEventListener("click", () => {
        order = moveItem(order, index, index - 1);
        renderRank();
      });
      const down = el("button", "rank-down", "↓");
      down.type = "button";
      down.disabled = index === order.length - 1;
      down.addEventListener("click", () => {
        order = moveItem(order, index, index + 1);
        renderRank();
      });
      item.append(
        el("span", "rank-label", label),
        el("span", "rank-text", option.text),
        up,
        down,
      );
      rankList.append(item);
    });
  };
  renderRank();

  const confRow = el("div", "confidence-row");
  const confLabel = el("label", "confidence-label", "Confidence");
  const slider = el("input", "confidence-slider");
  slider.type = "range";
  slider.min = "0";
  slider.max = "1";
  slider.step = "0.05";
  slider.value = "0.8";
  const confValue = el("span", "confidence-value", formatConfidence(confidence));
  slider.addEventListener("input", () => {
    confidence = Number(slider.value);
    confValue.textContent = formatConfidence(confidence);
  });
  confRow.append(confLabel, slider, confValue);

  const submit = el("button", "submit-answer", "Submit answer");
  submit.type = "button";
  submit.disabled = true;
  submit.addEventListener("click", () => {
    if (mode === "select") {
      if (selected === null) return;
      onSubmit(emitSelection(selected, confidence));
    } else {
      onSubmit(emitRanking(order, confidence));
    }
  });

  const setMode = (next: "select" | "rank") => {
    mode = next;
    selectBtn.setAttribute("aria-pressed", String(next === "select"));
    rankBtn.setAttribute("aria-pressed", String(next === "rank"));
    cards.hidden = next !== "select";
    rankList.hidden = next !== "rank";
    submit.disabled = next === "select" && selected === null;
  };
  selectBtn.addEventListener("click", () => setMode("select"));
  rankBtn.addEventListener("click", () => setMode("rank"));
  setMode("select");

  wrap.append(modeRow, cards, rankList, confRow, submit);
  return wrap;
}

/**
 * Build the full answer area for one question. The handler receives the
 * grammar-conformant answer string exactly once per user action.
 */
export function answerControls(question: string, onSubmit: SubmitHandler): HTMLElement {
  const root = el("div", "answer-controls");
  root.append(el("div", "question-text", question));
  const options = detectOptions(question);
  if (options) {
    root.append(optionControls(options, onSubmit));
    root.append(freeTextBlock(onSubmit, false));
  } else {
    root.append(freeTextBlock(onSubmit, true));
  }
  root.append(refusalRow(onSubmit));
  return root;
}
