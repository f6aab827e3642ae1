"""User-side actors and scripted policy playbooks.

Two interchangeable answer sources drive sessions: LlmUser role-plays the
non-expert product owner through the gateway, while OracleUser applies ordered
keyword rules for deterministic tests and benchmarks. PlaybookBackend is the
matching policy-side script: it emits a fixed question list per node and then
the node's specification block.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .engine import END_MARKER, Turn
from .feedback import UserFeedback, parse_feedback, render_feedback
from .gateway import Gateway, ModelParams, ScriptExhausted, Usage, approx_usage
from .prompts import render
from .tree import TreeNode

__all__ = [
    "OracleRule",
    "OracleUser",
    "LlmUser",
    "PlaybookBackend",
    "LengthMismatch",
    "measure_agreement",
    "load_oracle_rules",
    "load_playbooks",
]

DEFAULT_CONFIDENCE = 0.9


class LengthMismatch(ValueError):
    pass


@dataclass
class OracleRule:
    """All trigger keywords must occur (case-insensitive) in the question."""

    trigger_keywords: tuple[str, ...]
    response: str

    def matches(self, question: str) -> bool:
        probe = question.lower()
        return all(k.lower() in probe for k in self.trigger_keywords)


def _rule_response(raw: dict) -> str:
    if "response" in raw:
        return str(raw["response"])
    kind = raw.get("kind", "free_text")
    payload = tuple(str(p) for p in raw.get("payload", []))
    confidence = raw.get("confidence", DEFAULT_CONFIDENCE)
    if kind in ("dont_care", "dont_know"):
        confidence = None
    fb = UserFeedback(kind=kind, payload=payload,
                      confidence=confidence, raw="")
    return render_feedback(fb)


def load_oracle_rules(path: str | Path) -> "OracleUser":
    """Rule file (YAML or JSON): {care_scope?, default?, rules: [...]}."""
    text = Path(path).read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or "rules" not in doc:
        raise ValueError(f"oracle rule file {path} must contain a 'rules' list")
    rules = [
        OracleRule(
            trigger_keywords=tuple(str(k) for k in raw.get("trigger_keywords", [])),
            response=_rule_response(raw),
        )
        for raw in doc["rules"]
    ]
    return OracleUser(
        rules=rules,
        care_scope=tuple(str(k) for k in doc.get("care_scope", [])),
        default_response=str(doc.get("default", "[DontCare]")),
    )


@dataclass
class OracleUser:
    """Deterministic stand-in for the role-played user. First matching rule wins."""

    rules: list[OracleRule] = field(default_factory=list)
    care_scope: tuple[str, ...] = ()
    default_response: str = "[DontCare]"

    def reply(self, question: str, node: TreeNode, history: list[Turn]) -> str:
        if self.care_scope:
            probe = question.lower()
            if not any(k.lower() in probe for k in self.care_scope):
                return "[DontCare]"
        for rule in self.rules:
            if rule.matches(question):
                return rule.response
        return self.default_response


class LlmUser:
    """Role-plays the product owner over the gateway (judge-free, stateless)."""

    def __init__(self, gateway: Gateway, prd_content: str):
        if not prd_content.strip():
            raise ValueError("intent document must be nonempty")
        self.gateway = gateway
        self.prd_content = prd_content

    def reply(self, question: str, node: TreeNode, history: list[Turn]) -> str:
        system = render("user_sim", {
            "prd_content": self.prd_content,
            "node_name": node.name,
            "context_path": " > ".join(node.full_path),
        })
        messages = [{"role": "system", "content": system}]
        for turn in history:
            messages.append({"role": "user", "content": turn.question})
            messages.append({"role": "assistant", "content": turn.answer_raw})
        messages.append({"role": "user", "content": question})
        return self.gateway.complete("user_sim", messages).response


class PlaybookBackend:
    """Scripted interaction policy: fixed questions per node, then the summary.

    The current node is read from the rendered system prompt; the number of
    assistant messages already in the conversation indexes into the question
    list. Requests without a node focus are treated as plan initialization and
    answered with init_tree.
    """

    _FOCUS_RE = re.compile(r'about the "(.+?)" feature')

    def __init__(self, playbooks: dict[str, dict], init_tree: str | None = None):
        self.playbooks = playbooks
        self.init_tree = init_tree

    def complete(self, model_role: str, messages: list[dict], params: ModelParams) -> tuple[str, Usage]:
        system = messages[0]["content"] if messages else ""
        m = self._FOCUS_RE.search(system)
        if not m:
            if self.init_tree is None:
                raise ScriptExhausted("playbook has no scripted initial plan")
            return self.init_tree, approx_usage(messages, self.init_tree)
        name = m.group(1)
        book = self.playbooks.get(name)
        if book is None:
            raise ScriptExhausted(f"no playbook for node {name!r}")
        asked = sum(1 for msg in messages if msg["role"] == "assistant")
        questions = book.get("questions", [])
        if asked < len(questions):
            text = questions[asked]
        else:
            text = book["summary"].rstrip() + "\n\n" + END_MARKER
        return text, approx_usage(messages, text)


def load_playbooks(path: str | Path) -> dict[str, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"playbook file {path} must be a JSON object")
    return doc


def measure_agreement(replies_a: list[UserFeedback], replies_b: list[UserFeedback]) -> float:
    """Fraction of aligned positions with equal kind and payload (confidence ignored)."""
    if len(replies_a) != len(replies_b):
        raise LengthMismatch(f"{len(replies_a)} vs {len(replies_b)} replies")
    if not replies_a:
        return 1.0
    hits = sum(
        1 for a, b in zip(replies_a, replies_b)
        if a.kind == b.kind and a.payload == b.payload
    )
    return hits / len(replies_a)
