"""Grammar for user answers: selections, rankings, refusals, free text.

Answers arrive as raw strings in the shapes the answer-format instructions
produce, e.g. "[A > C > B]- Conf[0.8]", "[B]", "Answer: [B] - Confidence:
[0.6]", "[DontCare]". parse_feedback is a total function: anything that does
not match the grammar degrades to free_text rather than raising.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

__all__ = ["UserFeedback", "parse_feedback", "render_feedback", "KINDS"]

KINDS = ("selection", "ranking", "free_text", "dont_care", "dont_know")

_REFUSALS = {
    "dont_care": re.compile(r"^\[?\s*don'?t[\s_-]*care\s*\]?$", re.IGNORECASE),
    "dont_know": re.compile(r"^\[?\s*don'?t[\s_-]*know\s*\]?$", re.IGNORECASE),
}

# "Conf[0.8]", "Confidence: [0.6]", "confidence 0.7" etc.; the last match wins.
_CONF_RE = re.compile(
    r"[-–,;]?\s*conf(?:idence)?\s*[:=]?\s*(?:\[\s*([^\]]*?)\s*\]|([0-9]*\.?[0-9]+))\s*$",
    re.IGNORECASE,
)

_ANSWER_PREFIX_RE = re.compile(r"^answer\s*[:=]\s*", re.IGNORECASE)

# Bare (unbracketed) selections must look like an option label, not a sentence.
_BARE_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.+-]{0,15}$")


@dataclass(frozen=True)
class UserFeedback:
    kind: str
    payload: tuple[str, ...] = ()
    confidence: float | None = None
    raw: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feedback kind {self.kind!r}")

    @property
    def is_refusal(self) -> bool:
        return self.kind in ("dont_care", "dont_know")


def _refusal_kind(text: str) -> str | None:
    for kind, pattern in _REFUSALS.items():
        if pattern.match(text):
            return kind
    return None


def _parse_confidence(text: str) -> tuple[str, float | None]:
    """Split a trailing confidence marker off text; clamp into [0, 1]."""
    m = _CONF_RE.search(text)
    if not m:
        return text, None
    value = m.group(1) if m.group(1) is not None else m.group(2)
    try:
        conf = float(value)
    except (TypeError, ValueError):
        return text, None
    conf = min(1.0, max(0.0, conf))
    return text[: m.start()].strip(), conf


def parse_feedback(answer_raw: str) -> UserFeedback:
    """Parse one user answer. Never raises; unmatched input becomes free_text."""
    if not isinstance(answer_raw, str):
        answer_raw = str(answer_raw)
    free = UserFeedback(kind="free_text", payload=(answer_raw,), raw=answer_raw)
    text = answer_raw.strip()
    if not text:
        return free

    kind = _refusal_kind(text)
    if kind:
        return UserFeedback(kind=kind, raw=answer_raw)

    text = _ANSWER_PREFIX_RE.sub("", text)
    body, confidence = _parse_confidence(text)
    if not body:
        return free

    # Refusal with a stray confidence marker: refusals carry no confidence.
    kind = _refusal_kind(body)
    if kind:
        return UserFeedback(kind=kind, raw=answer_raw)

    bracketed = re.match(r"^\[(.*)\]$", body, re.DOTALL)
    if bracketed:
        inner = bracketed.group(1).strip()
        if not inner:
            return free
        kind = _refusal_kind(inner)
        if kind:
            return UserFeedback(kind=kind, raw=answer_raw)
        parts = [p.strip() for p in inner.split(">")]
        if len(parts) > 1:
            if any(not p for p in parts):
                return free
            return UserFeedback(kind="ranking", payload=tuple(parts),
                                confidence=confidence, raw=answer_raw)
        return UserFeedback(kind="selection", payload=(inner,),
                            confidence=confidence, raw=answer_raw)

    if ">" in body:
        parts = [p.strip() for p in body.split(">")]
        if all(_BARE_LABEL_RE.match(p) for p in parts):
            return UserFeedback(kind="ranking", payload=tuple(parts),
                                confidence=confidence, raw=answer_raw)
        return free
    if _BARE_LABEL_RE.match(body):
        return UserFeedback(kind="selection", payload=(body,),
                            confidence=confidence, raw=answer_raw)
    return free


def render_feedback(feedback: UserFeedback) -> str:
    """Canonical string for a feedback value, in the published answer shapes."""
    if feedback.kind == "dont_care":
        return "[DontCare]"
    if feedback.kind == "dont_know":
        return "[DontKnow]"
    if feedback.kind == "free_text":
        return feedback.payload[0] if feedback.payload else feedback.raw
    joined = " > ".join(feedback.payload)
    rendered = f"[{joined}]"
    if feedback.confidence is not None:
        rendered += f"- Conf[{format(feedback.confidence, 'g')}]"
    return rendered
