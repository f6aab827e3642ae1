// PRD pane and the score-over-nodes progress strip. Markdown rendering is
// intentionally minimal (headings, lists, paragraphs, inline code stripped to
// text) and escapes everything else; the strip is a dependency-free inline
// SVG polyline fed by evaluator report JSON.

export interface CheckpointScore {
  k: number;
  overall: number;
}

function heading(level: number, text: string): HTMLElement {
  const node = document.createElement(`h${Math.min(level, 6)}`);
  node.textContent = text;
  return node;
}

/** Tiny markdown subset renderer; everything lands as textContent, never HTML. */
export function renderMarkdown(markdown: string): HTMLElement {
  const root = document.createElement("div");
  root.className = "markdown";
  let list: HTMLUListElement | null = null;
  let paragraph: string[] = [];

  const flushParagraph = () => {
    if (paragraph.length) {
      const p = document.createElement("p");
      p.textContent = paragraph.join(" ");
      root.append(p);
      paragraph = [];
    }
  };
  const flushList = () => {
    if (list) {
      root.append(list);
      list = null;
    }
  };

  for (const rawLine of markdown.split("\n")) {
    const line = rawLine.trimEnd();
    const headingMatch = /^(#{1,6})\s+(.*)$/.exec(line);
    const itemMatch = /^\s*[-*]\s+(.*)$/.exec(line);
    if (headingMatch) {
      flushParagraph();
      flushList();
      root.append(heading(headingMatch[1]!.length, headingMatch[2]!));
    } else if (itemMatch) {
      flushParagraph();
      if (!list) list = document.createElement("ul");
      const item = document.createElement("li");
      item.textContent = itemMatch[1]!;
      list.append(item);
    } else if (line.trim() === "") {
      flushParagraph();
      flushList();
    } else {
      paragraph.push(line.trim());
    }
  }
  flushParagraph();
  flushList();
  return root;
}

export function renderPrd(container: HTMLElement, text: string | null): void {
  container.textContent = "";
  if (text === null) {
    container.hidden = true;
    return;
  }
  container.hidden = false;
  container.append(renderMarkdown(text));
}

/**
 * Plot overall alignment against completed-node count. Hidden entirely when
 * no report is available.
 */
export function renderProgressStrip(
  container: HTMLElement,
  checkpoints: CheckpointScore[] | null,
): void {
  container.textContent = "";
  if (!checkpoints || checkpoints.length === 0) {
    container.hidden = true;
    return;
  }
  container.hidden = false;
  const width = 320;
  const height = 80;
  const pad = 10;
  const maxK = Math.max(...checkpoints.map((c) => c.k));
  const x = (k: number) => (maxK <= 1 ? pad : pad + ((k - 1) / (maxK - 1)) * (width - 2 * pad));
  const y = (score: number) => height - pad - score * (height - 2 * pad);

  const svgNs = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(svgNs, "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "progress-strip");

  const sorted = [...checkpoints].sort((a, b) => a.k - b.k);
  const line = document.createElementNS(svgNs, "polyline");
  line.setAttribute("points", sorted.map((c) => `${x(c.k)},${y(c.overall)}`).join(" "));
  line.setAttribute("fill", "none");
  line.setAttribute("class", "strip-line");
  svg.append(line);

  for (const point of sorted) {
    const circle = document.createElementNS(svgNs, "circle");
    circle.setAttribute("cx", String(x(point.k)));
    circle.setAttribute("cy", String(y(point.overall)));
    circle.setAttribute("r", "3");
    circle.setAttribute("class", "strip-point");
    const title = document.createElementNS(svgNs, "title");
    title.textContent = `k=${point.k}: ${point.overall.toFixed(3)}`;
    circle.append(title);
    svg.append(circle);
  }
  container.append(svg);
}
