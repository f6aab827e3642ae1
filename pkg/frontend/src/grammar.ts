// Answer-string construction and option detection. Every emitted string must
// parse on the service into the intended feedback kind, so the shapes here
// are exact: "[B]", "[A > C > B]- Conf[0.8]", "[DontCare]", "[DontKnow]".

export interface OptionItem {
  label: string;
  text: string;
}

export const DONT_CARE = "[DontCare]";
export const DONT_KNOW = "[DontKnow]";

// Lettered list lines: "A. text", "B) text", "C: text", "Option D. text".
const OPTION_LINE = /^\s*(?:option\s+)?([A-Z])[.):]\s+(\S.*?)\s*$/i;

/**
 * Pull selectable options out of a question. Returns null when the question
 * has no machine-readable option list (fewer than two lettered lines, labels
 * not consecutive from A, or duplicates) so the caller can fall back to free
 * text.
 */
export function detectOptions(question: string): OptionItem[] | null {
  const items: OptionItem[] = [];
  for (const line of question.split("\n")) {
    const match = OPTION_LINE.exec(line);
    if (match) items.push({ label: match[1]!.toUpperCase(), text: match[2]! });
  }
  if (items.length < 2) return null;
  const seen = new Set<string>();
  for (let i = 0; i < items.length; i++) {
    const label = items[i]!.label;
    if (seen.has(label)) return null;
    seen.add(label);
    if (label !== String.fromCharCode(65 + i)) return null;
  }
  return items;
}

/** Render a [0, 1] slider value without float noise: 0.8 not "0.80000000...". */
export function formatConfidence(value: number): string {
  const clamped = Math.min(1, Math.max(0, value));
  return String(Number(clamped.toFixed(2)));
}

function confidenceSuffix(confidence?: number): string {
  if (confidence === undefined) return "";
  return `- Conf[${formatConfidence(confidence)}]`;
}

export function emitSelection(label: string, confidence?: number): string {
  return `[${label}]${confidenceSuffix(confidence)}`;
}

export function emitRanking(labels: readonly string[], confidence?: number): string {
  return `[${labels.join(" > ")}]${confidenceSuffix(confidence)}`;
}
