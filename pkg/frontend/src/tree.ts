// Collapsible requirement-tree view with revision diffing. The view is a
// pure projection: it renders the latest snapshot from the service and
// highlights what changed relative to the previously rendered snapshot,
// including nodes that were deleted by an update.

import type { TreeDoc, TreeNodeDoc } from "./api.js";

export const PATH_SEPARATOR = " > ";

interface FlatNode {
  path: string[];
  node: TreeNodeDoc;
}

function flatten(doc: TreeDoc): Map<string, FlatNode> {
  const out = new Map<string, FlatNode>();
  const walk = (name: string, node: TreeNodeDoc, prefix: string[]) => {
    const path = [...prefix, name];
    out.set(path.join(PATH_SEPARATOR), { path, node });
    for (const [childName, child] of Object.entries(node.submodules ?? {})) {
      walk(childName, child, path);
    }
  };
  for (const [name, node] of Object.entries(doc.funcs)) walk(name, node, []);
  return out;
}

export interface TreeDiff {
  added: Set<string>;
  removed: Set<string>;
  changed: Set<string>;
  newlyProcessed: Set<string>;
}

function contentKey(node: TreeNodeDoc): string {
  return JSON.stringify([node.description, node.features ?? []]);
}

/** Diff two snapshots by full node path; prev=null means everything is old news. */
export function diffTrees(prev: TreeDoc | null, next: TreeDoc): TreeDiff {
  const diff: TreeDiff = {
    added: new Set(),
    removed: new Set(),
    changed: new Set(),
    newlyProcessed: new Set(),
  };
  if (prev === null) return diff;
  const before = flatten(prev);
  const after = flatten(next);
  for (const key of after.keys()) {
    if (!before.has(key)) diff.added.add(key);
  }
  for (const key of before.keys()) {
    if (!after.has(key)) diff.removed.add(key);
  }
  for (const [key, entry] of after) {
    const old = before.get(key);
    if (!old) continue;
    if (contentKey(old.node) !== contentKey(entry.node)) diff.changed.add(key);
    if (!old.node.is_processed && entry.node.is_processed) diff.newlyProcessed.add(key);
  }
  return diff;
}

function nodeClasses(key: string, diff: TreeDiff | null): string {
  const classes = ["tree-node"];
  if (diff) {
    if (diff.added.has(key)) classes.push("added");
    if (diff.changed.has(key)) classes.push("changed");
    if (diff.newlyProcessed.has(key)) classes.push("newly-processed");
  }
  return classes.join(" ");
}

function renderNode(
  name: string,
  node: TreeNodeDoc,
  prefix: string[],
  diff: TreeDiff | null,
  removedByParent: Map<string, string[]>,
): HTMLLIElement {
  const path = [...prefix, name];
  const key = path.join(PATH_SEPARATOR);
  const item = document.createElement("li");
  item.className = nodeClasses(key, diff);
  item.dataset["path"] = key;

  const label = document.createElement("span");
  label.className = "node-name";
  label.textContent = name;
  if (node.is_processed) {
    const badge = document.createElement("span");
    badge.className = "badge processed";
    badge.textContent = "done";
    label.append(badge);
  }

  const children = Object.entries(node.submodules ?? {});
  const removedHere = removedByParent.get(key) ?? [];
  if (children.length > 0 || removedHere.length > 0) {
    const details = document.createElement("details");
    details.open = true;
    const summary = document.createElement("summary");
    summary.append(label);
    details.append(summary);
    const list = document.createElement("ul");
    list.className = "tree-children";
    for (const [childName, child] of children) {
      list.append(renderNode(childName, child, path, diff, removedByParent));
    }
    for (const removedName of removedHere) {
      list.append(renderRemoved(removedName, [...path, removedName]));
    }
    details.append(list);
    item.append(details);
  } else {
    item.append(label);
  }
  return item;
}

function renderRemoved(name: string, path: string[]): HTMLLIElement {
  const item = document.createElement("li");
  item.className = "tree-node removed";
  item.dataset["path"] = path.join(PATH_SEPARATOR);
  const label = document.createElement("span");
  label.className = "node-name";
  label.textContent = name;
  const badge = document.createElement("span");
  badge.className = "badge removed-badge";
  badge.textContent = "removed";
  label.append(badge);
  item.append(label);
  return item;
}

/**
 * Render the tree into container. Removed nodes from the diff are shown
 * struck through under their former parent.
 */
export function renderTree(container: HTMLElement, doc: TreeDoc, diff: TreeDiff | null): void {
  container.textContent = "";
  const removedByParent = new Map<string, string[]>();
  if (diff) {
    for (const key of diff.removed) {
      const parts = key.split(PATH_SEPARATOR);
      // A removed subtree lists only its root; descendants go with it.
      const parentKey = parts.slice(0, -1).join(PATH_SEPARATOR);
      if (parts.length > 1 && diff.removed.has(parentKey)) continue;
      const bucket = removedByParent.get(parentKey) ?? [];
      bucket.push(parts[parts.length - 1]!);
      removedByParent.set(parentKey, bucket);
    }
  }
  const list = document.createElement("ul");
  list.className = "tree-root";
  for (const [name, node] of Object.entries(doc.funcs)) {
    list.append(renderNode(name, node, [], diff, removedByParent));
  }
  for (const removedName of removedByParent.get("") ?? []) {
    list.append(renderRemoved(removedName, [removedName]));
  }
  container.append(list);
}
