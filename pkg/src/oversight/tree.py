"""Requirement tree: parsing, traversal, constrained updates, serialization.

The tree is the evolving interaction plan. Five fixed top-level modules mirror
the sections of a product requirements document; leaves (nodes without
submodules) are the concrete interaction targets, discussed one at a time in
depth-first order. Trees are immutable values: every operation returns a new
tree, so they are safe to share across threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

__all__ = [
    "TreeNode",
    "RequirementTree",
    "UpdateResult",
    "TreeError",
    "MalformedTree",
    "DuplicateSibling",
    "WrongRootCount",
    "ProcessedNodeMutated",
    "RootSetChanged",
    "NO_CHANGES_SENTINEL",
    "CANONICAL_ROOTS",
    "parse_tree",
    "serialize_tree",
    "next_unresolved",
    "apply_update",
    "mark_processed",
    "extract_json_object",
    "normalize_title",
]

NO_CHANGES_SENTINEL = "NO_CHANGES_NEEDED"

# Canonical section titles for the five top-level modules.
CANONICAL_ROOTS = (
    "Product Overview",
    "Core Functional Modules",
    "Non-functional Requirements",
    "User Experience Design",
    "Business Rules",
)

ROOT_COUNT = 5


class TreeError(Exception):
    """Base class for tree parsing/update errors."""


class MalformedTree(TreeError):
    pass


class DuplicateSibling(TreeError):
    pass


class WrongRootCount(TreeError):
    pass


class ProcessedNodeMutated(TreeError):
    pass


class RootSetChanged(TreeError):
    pass


def normalize_title(name: str) -> str:
    """Case- and whitespace-insensitive key for comparing module titles."""
    return re.sub(r"\s+", " ", name.strip()).lower()


@dataclass(frozen=True)
class TreeNode:
    name: str
    description: str = ""
    features: tuple[str, ...] = ()
    is_processed: bool = False
    submodules: tuple[TreeNode, ...] = ()
    path: tuple[str, ...] = ()  # ancestor names, root-first, excluding self

    @property
    def node_type(self) -> str:
        return "core_module" if not self.path else "sub_module"

    @property
    def full_path(self) -> tuple[str, ...]:
        return self.path + (self.name,)

    @property
    def is_leaf(self) -> bool:
        return not self.submodules

    def child(self, name: str) -> TreeNode | None:
        for sub in self.submodules:
            if sub.name == name:
                return sub
        return None

    def same_content(self, other: TreeNode) -> bool:
        """Structural equality ignoring derived paths."""
        return (
            self.name == other.name
            and self.description == other.description
            and self.features == other.features
            and self.is_processed == other.is_processed
            and len(self.submodules) == len(other.submodules)
            and all(a.same_content(b) for a, b in zip(self.submodules, other.submodules))
        )


@dataclass(frozen=True)
class RequirementTree:
    roots: tuple[TreeNode, ...]
    version: int = 0
    origin_query: str = ""

    def walk(self):
        """Depth-first pre-order over all nodes (root order, then insertion order)."""
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.submodules))

    def find(self, node_path: tuple[str, ...] | list[str]) -> TreeNode | None:
        node_path = tuple(node_path)
        if not node_path:
            return None
        node: TreeNode | None = None
        candidates = self.roots
        for name in node_path:
            node = next((n for n in candidates if n.name == name), None)
            if node is None:
                return None
            candidates = node.submodules
        return node

    def leaf_targets(self) -> list[TreeNode]:
        return [n for n in self.walk() if n.is_leaf]

    def processed_paths(self) -> set[tuple[str, ...]]:
        return {n.full_path for n in self.walk() if n.is_processed}

    def same_content(self, other: RequirementTree) -> bool:
        return len(self.roots) == len(other.roots) and all(
            a.same_content(b) for a, b in zip(self.roots, other.roots)
        )


@dataclass
class UpdateResult:
    """Outcome of apply_update: rejected updates keep the old tree and attach the error."""

    tree: RequirementTree
    error: TreeError | None = None
    no_change: bool = False

    @property
    def accepted(self) -> bool:
        return self.error is None


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_NODE_META_KEYS = {"description", "features", "submodules", "is_processed", "node_type", "name"}
_WRAPPER_KEYS = ("funcs", "requirement tree", "requirement_tree")

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*$", re.MULTILINE)


def extract_json_object(text: str) -> str:
    """Return the first balanced top-level JSON object in text.

    LLM output routinely wraps the payload in code fences or prose; we scan for
    the first '{' and take the balanced object from there, respecting strings.
    """
    start = text.find("{")
    if start < 0:
        raise MalformedTree("no JSON object found in text")
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        c = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif c == "\\":
                escaped = True
            elif c == '"':
                in_string = False
            continue
        if c == '"':
            in_string = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    raise MalformedTree("unbalanced JSON object in text")


def _pairs_hook(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise DuplicateSibling(f"duplicate key {key!r}")
        seen.add(key)
    return dict(pairs)


def _parse_node(name: str, raw: object, path: tuple[str, ...]) -> TreeNode:
    if not isinstance(raw, dict):
        raise MalformedTree(f"node {name!r} is not an object")
    description = raw.get("description", "")
    if not isinstance(description, str):
        raise MalformedTree(f"node {name!r}: description must be a string")
    features_raw = raw.get("features", [])
    if features_raw is None:
        features_raw = []
    if not isinstance(features_raw, list) or not all(isinstance(f, str) for f in features_raw):
        raise MalformedTree(f"node {name!r}: features must be a list of strings")
    processed = raw.get("is_processed", False)
    if not isinstance(processed, bool):
        raise MalformedTree(f"node {name!r}: is_processed must be a boolean")
    subs_raw = raw.get("submodules", {})
    if subs_raw is None:
        subs_raw = {}
    if not isinstance(subs_raw, dict):
        raise MalformedTree(f"node {name!r}: submodules must be an object")
    child_path = path + (name,)
    submodules = tuple(_parse_node(k, v, child_path) for k, v in subs_raw.items())
    return TreeNode(
        name=name,
        description=description,
        features=tuple(features_raw),
        is_processed=processed,
        submodules=submodules,
        path=path,
    )


def _unwrap_module_map(payload: dict) -> dict:
    # Accept {"funcs": {...}}, {"Requirement Tree": {...}}, or a bare map.
    if len(payload) == 1:
        key = next(iter(payload))
        if normalize_title(key) in _WRAPPER_KEYS and isinstance(payload[key], dict):
            return payload[key]
    return payload


def parse_tree(
    json_text: str,
    *,
    strict: bool = True,
    origin_query: str = "",
    version: int = 0,
    warnings: list[str] | None = None,
) -> RequirementTree:
    """Parse tree JSON (optionally fenced / wrapped) into a RequirementTree.

    strict mode rejects a root count other than five; lenient mode records a
    warning and accepts the tree as-is.
    """
    try:
        payload = json.loads(extract_json_object(json_text), object_pairs_hook=_pairs_hook)
    except DuplicateSibling:
        raise
    except MalformedTree:
        raise
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedTree(f"invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedTree("top-level JSON value is not an object")
    module_map = _unwrap_module_map(payload)
    # A wrapper key sitting next to module entries would be a module itself;
    # only a lone wrapper is unwrapped above.
    roots = tuple(_parse_node(name, raw, ()) for name, raw in module_map.items())
    if len(roots) != ROOT_COUNT:
        msg = f"expected {ROOT_COUNT} top-level modules, found {len(roots)}"
        if strict:
            raise WrongRootCount(msg)
        if warnings is not None:
            warnings.append(msg)
    return RequirementTree(roots=roots, version=version, origin_query=origin_query)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _node_to_obj(node: TreeNode) -> dict:
    obj: dict = {
        "description": node.description,
        "node_type": node.node_type,
        "features": list(node.features),
        "is_processed": node.is_processed,
    }
    if node.submodules:
        obj["submodules"] = {sub.name: _node_to_obj(sub) for sub in node.submodules}
    return obj


def serialize_tree(tree: RequirementTree) -> str:
    """Deterministic JSON rendering; parse_tree(serialize_tree(t)) round-trips."""
    doc = {"funcs": {root.name: _node_to_obj(root) for root in tree.roots}}
    return json.dumps(doc, ensure_ascii=False, indent=2)


# ---------------------------------------------------------------------------
# Traversal
# ---------------------------------------------------------------------------


def next_unresolved(tree: RequirementTree) -> TreeNode | None:
    """First unprocessed leaf target in depth-first pre-order, or None."""
    for node in tree.walk():
        if node.is_leaf and not node.is_processed:
            return node
    return None


def _with_processed(node: TreeNode, target: tuple[str, ...]) -> TreeNode:
    if node.full_path == target:
        if node.is_processed:
            raise ValueError(f"node {'/'.join(target)} is already processed")
        return replace(node, is_processed=True)
    if target[: len(node.full_path)] != node.full_path:
        return node
    return replace(node, submodules=tuple(_with_processed(s, target) for s in node.submodules))


def mark_processed(tree: RequirementTree, node_path: tuple[str, ...] | list[str]) -> RequirementTree:
    """Return a tree with the node at node_path flagged processed (version kept).

    Staging step used while a node's completion is folded into the next applied
    update; the version bump happens when that revision is applied.
    """
    node_path = tuple(node_path)
    if tree.find(node_path) is None:
        raise ValueError(f"no node at path {'/'.join(node_path)}")
    return replace(tree, roots=tuple(_with_processed(r, node_path) for r in tree.roots))


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------


def _strip_fences(text: str) -> str:
    return _FENCE_RE.sub("", text).strip()


def _is_sentinel(text: str) -> bool:
    cleaned = _strip_fences(text).strip().strip("`").strip()
    return cleaned == NO_CHANGES_SENTINEL


def apply_update(tree: RequirementTree, update_text: str) -> UpdateResult:
    """Apply an updater's emitted text to the tree.

    The text is either the no-changes sentinel or a full replacement tree.
    Constraints on a replacement: the five root names are unchanged, and every
    node already flagged processed keeps its name, description, features and
    flag. A rejected update returns the old tree untouched with the error
    attached, so the surrounding loop can log and continue.
    """
    if _is_sentinel(update_text):
        return UpdateResult(tree=replace(tree, version=tree.version + 1), no_change=True)
    try:
        new_tree = parse_tree(
            update_text,
            strict=True,
            origin_query=tree.origin_query,
            version=tree.version + 1,
        )
    except TreeError as exc:
        return UpdateResult(tree=tree, error=exc, no_change=True)

    old_roots = [normalize_title(r.name) for r in tree.roots]
    new_roots = [normalize_title(r.name) for r in new_tree.roots]
    if sorted(old_roots) != sorted(new_roots):
        return UpdateResult(tree=tree, error=RootSetChanged(
            f"root set changed: {old_roots} -> {new_roots}"), no_change=True)

    for node in tree.walk():
        if not node.is_processed:
            continue
        counterpart = new_tree.find(node.full_path)
        joined = " / ".join(node.full_path)
        if counterpart is None:
            return UpdateResult(tree=tree, error=ProcessedNodeMutated(
                f"processed node removed: {joined}"), no_change=True)
        if not counterpart.is_processed:
            return UpdateResult(tree=tree, error=ProcessedNodeMutated(
                f"processed node reverted to unprocessed: {joined}"), no_change=True)
        if (counterpart.description != node.description
                or counterpart.features != node.features):
            return UpdateResult(tree=tree, error=ProcessedNodeMutated(
                f"processed node content changed: {joined}"), no_change=True)
        if tuple(s.name for s in counterpart.submodules) != tuple(s.name for s in node.submodules):
            return UpdateResult(tree=tree, error=ProcessedNodeMutated(
                f"processed node structure changed: {joined}"), no_change=True)

    return UpdateResult(tree=new_tree)
