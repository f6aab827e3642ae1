"""Interactive elicitation loop over the requirement tree.

A session walks the tree depth-first. For each leaf it runs a focused Q/A
sub-dialogue with the user until the policy model emits the end marker, folds
the resulting preference summary into the accumulated context, marks the node
processed, then lets the updater model revise the remaining plan. When no
unprocessed leaf remains, the generator model synthesizes the final document
from the accumulated summaries.
"""

from __future__ import annotations

import hashlib
import time
import uuid
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

from .feedback import UserFeedback, parse_feedback
from .gateway import ChatExchange, Gateway
from .prompts import render
from .storage import SessionStore
from .tree import (
    RequirementTree,
    TreeError,
    TreeNode,
    apply_update,
    mark_processed,
    next_unresolved,
    parse_tree,
    serialize_tree,
)

__all__ = [
    "END_MARKER",
    "TURN_CAP",
    "EngineError",
    "TreeInitFailed",
    "SessionNotAwaiting",
    "NodeMismatch",
    "SessionNotComplete",
    "Turn",
    "NodeSession",
    "PreferenceEntry",
    "Session",
    "Question",
    "NodeComplete",
    "AllComplete",
    "UserAgent",
    "Engine",
    "deterministic_session_id",
]

END_MARKER = "[End of Feature Discussion]"
TURN_CAP = 12  # assistant questions per node before the wrap-up nudge

_NUDGE = (
    "You have reached the question limit for this feature. Do not ask further "
    "questions. Output the final Feature Specification now, ending with "
    f'"{END_MARKER}".'
)

FEATURE_GOALS_FALLBACK = "- Specific implementation requirements for this feature"


class EngineError(Exception):
    pass


class TreeInitFailed(EngineError):
    pass


class SessionNotAwaiting(EngineError):
    pass


class NodeMismatch(EngineError):
    pass


class SessionNotComplete(EngineError):
    pass


@dataclass
class Turn:
    question: str
    answer_raw: str
    parsed: UserFeedback


@dataclass
class NodeSession:
    node_path: tuple[str, ...]
    node_name: str
    turns: list[Turn] = field(default_factory=list)
    pending_question: str | None = None
    preference_summary: str | None = None
    end_detected: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def user_turns(self) -> int:
        return len(self.turns)

    @property
    def questions_asked(self) -> int:
        return len(self.turns) + (1 if self.pending_question is not None else 0)


@dataclass
class PreferenceEntry:
    node_path: tuple[str, ...]
    summary: str
    tree_version: int


@dataclass
class Session:
    id: str
    origin_query: str
    tree_history: list[RequirementTree]
    context: list[PreferenceEntry] = field(default_factory=list)
    node_sessions: list[NodeSession] = field(default_factory=list)
    status: str = "running"  # running | awaiting_user | generating | done | failed
    prd: str | None = None
    checkpoint_prds: list[tuple[int, str]] = field(default_factory=list)
    update_log: list[str] = field(default_factory=list)

    @property
    def tree(self) -> RequirementTree:
        return self.tree_history[-1]

    @property
    def current_node_session(self) -> NodeSession | None:
        return self.node_sessions[-1] if self.node_sessions else None

    @property
    def total_turns(self) -> int:
        return sum(ns.user_turns for ns in self.node_sessions)

    @property
    def turns_per_node(self) -> list[int]:
        return [ns.user_turns for ns in self.node_sessions if ns.end_detected]

    def metrics(self) -> dict:
        completed = self.turns_per_node
        return {
            "total_turns": self.total_turns,
            "turns_per_node": completed,
            "avg_turns_per_node": (sum(completed) / len(completed)) if completed else None,
            "completed_nodes": len(completed),
        }


# Step signals returned by next_question.


@dataclass(frozen=True)
class Question:
    node_path: tuple[str, ...]
    text: str


@dataclass(frozen=True)
class NodeComplete:
    node_path: tuple[str, ...]
    summary: str


@dataclass(frozen=True)
class AllComplete:
    pass


class UserAgent(Protocol):
    """Answer source for driven runs: human proxy, LLM role-play, or oracle."""

    def reply(self, question: str, node: TreeNode, history: list[Turn]) -> str:
        ...


def deterministic_session_id(query: str) -> str:
    return hashlib.sha256(query.encode("utf-8")).hexdigest()[:12]


def _context_path(node: TreeNode) -> str:
    return " > ".join(node.full_path)


def _feature_goals(node: TreeNode) -> str:
    if node.features:
        return "\n".join(f"- {feat}" for feat in node.features)
    return FEATURE_GOALS_FALLBACK


def render_accumulated_context(entries: list[PreferenceEntry]) -> str:
    if not entries:
        return "## Accumulated Interaction Results\n(none yet)"
    blocks = ["## Accumulated Interaction Results"]
    for entry in entries:
        blocks.append(f"### {' > '.join(entry.node_path)}\n{entry.summary}")
    return "\n\n".join(blocks)


def render_remaining_nodes(tree: RequirementTree) -> str:
    lines = [
        f"- {' > '.join(n.full_path)}: {n.description}"
        for n in tree.leaf_targets()
        if not n.is_processed
    ]
    return "\n".join(lines) if lines else "(none)"


def render_module_outline(tree: RequirementTree) -> str:
    lines = ["# Module Overview of the Final Plan"]

    def emit(node: TreeNode, depth: int) -> None:
        desc = f": {node.description}" if node.description else ""
        lines.append(f"{'  ' * depth}- {node.name}{desc}")
        for sub in node.submodules:
            emit(sub, depth + 1)

    for root in tree.roots:
        emit(root, 0)
    return "\n".join(lines)


def extract_summary(response: str) -> tuple[str | None, str | None]:
    """Split a marker-bearing response into (summary, warning).

    The specification block is everything from the last "## " heading before
    the end marker. A marker without any heading degrades to the raw text
    before the marker, with a warning.
    """
    idx = response.find(END_MARKER)
    if idx < 0:
        return None, None
    head = response[:idx]
    heading_at = head.rfind("\n## ")
    if heading_at >= 0:
        start = heading_at + 1
    elif head.startswith("## "):
        start = 0
    else:
        return head.strip(), "end marker without a specification heading; raw text kept"
    return head[start:].strip(), None


class Engine:
    def __init__(
        self,
        gateway: Gateway,
        *,
        store: SessionStore | None = None,
        turn_cap: int = TURN_CAP,
        clock: Callable[[], float] = time.time,
        id_factory: Callable[[str], str] | None = None,
    ):
        self.gateway = gateway
        self.store = store
        self.turn_cap = turn_cap
        self.clock = clock
        self.id_factory = id_factory or (lambda _q: uuid.uuid4().hex[:12])

    # -- transcript plumbing --------------------------------------------------

    def _record(self, session: Session, exchange: ChatExchange, role: str = "assistant") -> None:
        if self.store is None:
            return
        self.store.transcript_writer(session.id).append({
            "role": role,
            "model_role": exchange.model_role,
            "request_messages": list(exchange.messages),
            "response": exchange.response,
            "usage": {
                "prompt_tokens": exchange.usage.prompt_tokens,
                "completion_tokens": exchange.usage.completion_tokens,
            },
            "latency_ms": exchange.latency_ms,
            "ts": self.clock(),
        })

    def _record_user_turn(self, session: Session, answer_raw: str) -> None:
        if self.store is None:
            return
        self.store.transcript_writer(session.id).append({
            "role": "user",
            "model_role": None,
            "request_messages": [],
            "response": answer_raw,
            "usage": {"prompt_tokens": 0, "completion_tokens": 0},
            "latency_ms": 0.0,
            "ts": self.clock(),
        })

    def _snapshot(self, session: Session) -> None:
        if self.store is None:
            return
        self.store.save_state(session.id, session_to_dict(session))

    def _save_revision(self, session: Session) -> None:
        if self.store is None:
            return
        tree = session.tree
        self.store.save_tree_revision(session.id, tree.version, serialize_tree(tree))

    # -- lifecycle -------------------------------------------------------------

    def initialize_session(self, query: str, *, session_id: str | None = None) -> Session:
        if not query or not query.strip():
            raise ValueError("query must be nonempty")
        sid = session_id or self.id_factory(query)
        messages = [
            {"role": "system", "content": render("tree_init", {})},
            {"role": "user", "content": query},
        ]
        exchange = self.gateway.complete("interaction_policy", messages)
        tree, repair_warning = self._parse_init_tree(query, messages, exchange)
        session = Session(id=sid, origin_query=query, tree_history=[tree])
        if repair_warning:
            session.update_log.append(repair_warning)
        self._record(session, exchange)
        self._save_revision(session)
        self._snapshot(session)
        return session

    def _parse_init_tree(self, query, messages, exchange) -> tuple[RequirementTree, str | None]:
        try:
            return parse_tree(exchange.response, origin_query=query), None
        except TreeError as first_error:
            retry_messages = messages + [
                {"role": "assistant", "content": exchange.response},
                {"role": "user", "content": (
                    f"That output could not be used ({first_error}). Output the "
                    "complete plan again as one valid JSON object with exactly "
                    "the five required top-level modules.")},
            ]
            retry = self.gateway.complete("interaction_policy", retry_messages)
            try:
                tree = parse_tree(retry.response, origin_query=query)
            except TreeError as second_error:
                raise TreeInitFailed(
                    f"tree initialization failed twice: {first_error}; then {second_error}"
                ) from second_error
            return tree, f"initial tree required a repair retry: {first_error}"

    def next_question(self, session: Session) -> Question | NodeComplete | AllComplete:
        if session.status == "awaiting_user":
            ns = session.current_node_session
            return Question(node_path=ns.node_path, text=ns.pending_question)
        if session.status != "running":
            raise SessionNotAwaiting(f"session is {session.status}")

        node = next_unresolved(session.tree)
        if node is None:
            return AllComplete()

        ns = session.current_node_session
        if ns is None or ns.node_path != node.full_path or ns.end_detected:
            ns = NodeSession(node_path=node.full_path, node_name=node.name)
            session.node_sessions.append(ns)

        messages = [{"role": "system", "content": render("interaction_system", {
            "node_name": node.name,
            "context_path": _context_path(node),
            "node_description": node.description,
            "feature_goals": _feature_goals(node),
            "original_query": session.origin_query,
        })}]
        for turn in ns.turns:
            messages.append({"role": "assistant", "content": turn.question})
            messages.append({"role": "user", "content": turn.answer_raw})
        nudged = len(ns.turns) >= self.turn_cap
        if nudged:
            messages.append({"role": "system", "content": _NUDGE})

        exchange = self.gateway.complete("interaction_policy", messages)
        self._record(session, exchange)
        response = exchange.response

        summary, warning = extract_summary(response)
        if summary is None and nudged:
            # The cap nudge was ignored; close the node with what we have.
            summary = response.strip()
            warning = "turn cap reached without end marker; response kept as summary"
        if summary is not None:
            if warning:
                ns.warnings.append(warning)
            ns.preference_summary = summary
            ns.end_detected = True
            self._snapshot(session)
            return NodeComplete(node_path=ns.node_path, summary=summary)

        ns.pending_question = response
        session.status = "awaiting_user"
        self._snapshot(session)
        return Question(node_path=ns.node_path, text=response)

    def submit_answer(self, session: Session, node_path, answer_raw: str) -> Turn:
        if session.status != "awaiting_user":
            raise SessionNotAwaiting(f"session is {session.status}, no question pending")
        ns = session.current_node_session
        if tuple(node_path) != ns.node_path:
            raise NodeMismatch(
                f"answer names node {tuple(node_path)}, question was for {ns.node_path}")
        turn = Turn(
            question=ns.pending_question,
            answer_raw=answer_raw,
            parsed=parse_feedback(answer_raw),
        )
        ns.turns.append(turn)
        ns.pending_question = None
        session.status = "running"
        self._record_user_turn(session, answer_raw)
        self._snapshot(session)
        return turn

    def complete_node(self, session: Session, node_path) -> Session:
        node_path = tuple(node_path)
        ns = session.current_node_session
        if ns is None or ns.node_path != node_path or not ns.end_detected:
            raise EngineError(f"node {node_path} has no completed discussion to fold in")
        if session.tree.find(node_path) is None or session.tree.find(node_path).is_processed:
            raise EngineError(f"node {node_path} is missing or already processed")

        # A retry after an updater failure must not duplicate the entry.
        if not (session.context and session.context[-1].node_path == node_path):
            session.context.append(PreferenceEntry(
                node_path=node_path,
                summary=ns.preference_summary,
                tree_version=session.tree.version,
            ))
        staged = mark_processed(session.tree, node_path)
        node = staged.find(node_path)

        prompt = render("tree_update", {
            "original_query": session.origin_query,
            "completed_node_name": node.name,
            "completed_node_path": _context_path(node),
            "completed_node_description": node.description,
            "accumulated_context": render_accumulated_context(session.context),
            "current_plan": serialize_tree(staged),
            "remaining_node_info": render_remaining_nodes(staged),
        })
        exchange = self.gateway.complete("tree_updater", [{"role": "system", "content": prompt}])
        self._record(session, exchange)

        result = apply_update(staged, exchange.response)
        if result.error is not None:
            session.update_log.append(
                f"update after {' > '.join(node_path)} rejected: {result.error}")
            new_tree = replace(staged, version=staged.version + 1)
        else:
            new_tree = result.tree
            if result.no_change:
                session.update_log.append(
                    f"update after {' > '.join(node_path)}: no changes")
        session.tree_history.append(new_tree)
        self._save_revision(session)
        self._snapshot(session)
        return session

    def generate_prd(self, session: Session, *, intermediate: bool = False) -> str:
        if intermediate:
            if not session.context:
                raise SessionNotComplete("no completed node to summarize yet")
        else:
            if next_unresolved(session.tree) is not None:
                raise SessionNotComplete("unprocessed nodes remain")
            session.status = "generating"

        blocks = []
        for entry in session.context:
            blocks.append(f"### Module: {' > '.join(entry.node_path)}\n\n{entry.summary}")
        prompt = render("doc_generator", {
            "original_query": session.origin_query,
            "module_context": render_module_outline(session.tree),
            "combined_specs": "\n\n".join(blocks),
        })
        exchange = self.gateway.complete("doc_generator", [{"role": "system", "content": prompt}])
        self._record(session, exchange)
        text = exchange.response

        if intermediate:
            session.checkpoint_prds.append((len(session.context), text))
        else:
            session.prd = text
            session.status = "done"
            if self.store is not None:
                self.store.save_prd(session.id, text)
        self._snapshot(session)
        return text

    # -- driven loop -------------------------------------------------------------

    def run(
        self,
        query: str,
        user: UserAgent,
        *,
        session_id: str | None = None,
        checkpoint_cadence: int = 0,
        max_steps: int = 10_000,
    ) -> Session:
        """Drive a full session against a user agent; returns the done session."""
        session = self.initialize_session(query, session_id=session_id)
        for _ in range(max_steps):
            signal = self.next_question(session)
            if isinstance(signal, Question):
                node = session.tree.find(signal.node_path)
                answer = user.reply(signal.text, node, session.current_node_session.turns)
                self.submit_answer(session, signal.node_path, answer)
            elif isinstance(signal, NodeComplete):
                self.complete_node(session, signal.node_path)
                if checkpoint_cadence and len(session.context) % checkpoint_cadence == 0:
                    if next_unresolved(session.tree) is not None:
                        self.generate_prd(session, intermediate=True)
            else:
                self.generate_prd(session)
                return session
        raise EngineError(f"run did not terminate within {max_steps} steps")


# -- persistence mapping -----------------------------------------------------


def session_to_dict(session: Session) -> dict:
    return {
        "id": session.id,
        "origin_query": session.origin_query,
        "status": session.status,
        "tree_version": session.tree.version,
        "tree": serialize_tree(session.tree),
        "context": [
            {"node_path": list(e.node_path), "summary": e.summary,
             "tree_version": e.tree_version}
            for e in session.context
        ],
        "node_sessions": [
            {
                "node_path": list(ns.node_path),
                "node_name": ns.node_name,
                "pending_question": ns.pending_question,
                "preference_summary": ns.preference_summary,
                "end_detected": ns.end_detected,
                "warnings": ns.warnings,
                "turns": [
                    {
                        "question": t.question,
                        "answer_raw": t.answer_raw,
                        "parsed": {
                            "kind": t.parsed.kind,
                            "payload": list(t.parsed.payload),
                            "confidence": t.parsed.confidence,
                        },
                    }
                    for t in ns.turns
                ],
            }
            for ns in session.node_sessions
        ],
        "prd": session.prd,
        "checkpoint_prds": [[k, text] for k, text in session.checkpoint_prds],
        "update_log": session.update_log,
        "metrics": session.metrics(),
    }


def session_from_dict(state: dict, *, tree_revisions: dict[int, str] | None = None) -> Session:
    # A crash between revision write and snapshot can leave one revision the
    # snapshot does not know about; the snapshot wins on resume.
    snapshot_version = state.get("tree_version", 0)
    versions = sorted(v for v in (tree_revisions or {}) if v <= snapshot_version)
    history = [
        parse_tree(tree_revisions[v], strict=False, version=v,
                   origin_query=state["origin_query"])
        for v in versions
    ]
    if not history:
        history = [parse_tree(state["tree"], strict=False,
                              version=state.get("tree_version", 0),
                              origin_query=state["origin_query"])]
    session = Session(
        id=state["id"],
        origin_query=state["origin_query"],
        tree_history=history,
        status=state["status"],
        prd=state.get("prd"),
        checkpoint_prds=[(int(k), text) for k, text in state.get("checkpoint_prds", [])],
        update_log=list(state.get("update_log", [])),
    )
    for e in state.get("context", []):
        session.context.append(PreferenceEntry(
            node_path=tuple(e["node_path"]), summary=e["summary"],
            tree_version=e["tree_version"]))
    for raw in state.get("node_sessions", []):
        ns = NodeSession(
            node_path=tuple(raw["node_path"]),
            node_name=raw["node_name"],
            pending_question=raw.get("pending_question"),
            preference_summary=raw.get("preference_summary"),
            end_detected=raw.get("end_detected", False),
            warnings=list(raw.get("warnings", [])),
        )
        for t in raw.get("turns", []):
            ns.turns.append(Turn(
                question=t["question"],
                answer_raw=t["answer_raw"],
                parsed=parse_feedback(t["answer_raw"]),
            ))
        session.node_sessions.append(ns)
    return session
