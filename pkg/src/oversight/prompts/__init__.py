"""Prompt template library with strict render-time slot checking.

Templates live as data files next to a sha256 manifest so the shipped bodies
are auditable and tamper-evident. Slot syntax is single-brace {name}; literal
braces are written doubled ({{ and }}) in template files. Slot values are
substituted verbatim and never rescanned, so user content cannot inject
placeholders.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

__all__ = [
    "PromptTemplate",
    "PromptError",
    "MissingSlot",
    "UnknownSlot",
    "ResidualPlaceholder",
    "TemplateIntegrityError",
    "TEMPLATE_IDS",
    "load_template",
    "render",
    "render_body",
]

TEMPLATE_IDS = (
    "interaction_system",
    "tree_init",
    "tree_update",
    "doc_generator",
    "user_sim",
    "eval_split",
    "eval_module",
    "progressive_reward",
    "rubrics_gen",
)


class PromptError(Exception):
    pass


class MissingSlot(PromptError):
    pass


class UnknownSlot(PromptError):
    pass


class ResidualPlaceholder(PromptError):
    pass


class TemplateIntegrityError(PromptError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    required_slots: frozenset[str]


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _data_dir():
    return resources.files(__package__).joinpath("data")


@lru_cache(maxsize=1)
def _manifest() -> dict:
    with _data_dir().joinpath("manifest.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


@lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown template id {template_id!r}")
    entry = _manifest()[template_id]
    raw = _data_dir().joinpath(entry["file"]).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != entry["sha256"]:
        raise TemplateIntegrityError(
            f"template {template_id} does not match its manifest checksum")
    return PromptTemplate(
        id=template_id,
        body=raw.decode("utf-8"),
        required_slots=frozenset(entry["required_slots"]),
    )


def render_body(body: str, slots: dict[str, str], *, template_id: str = "<inline>") -> str:
    """Substitute slots into body; every brace must be a slot or an escape."""
    out: list[str] = []
    i = 0
    n = len(body)
    while i < n:
        c = body[i]
        if c == "{":
            if body.startswith("{{", i):
                out.append("{")
                i += 2
                continue
            m = _NAME_RE.match(body, i + 1)
            if m and m.end() < n and body[m.end()] == "}":
                name = m.group()
                if name not in slots:
                    raise ResidualPlaceholder(
                        f"{template_id}: unexpected placeholder {{{name}}}")
                out.append(slots[name])
                i = m.end() + 1
                continue
            raise ResidualPlaceholder(f"{template_id}: stray '{{' at offset {i}")
        if c == "}":
            if body.startswith("}}", i):
                out.append("}")
                i += 2
                continue
            raise ResidualPlaceholder(f"{template_id}: stray '}}' at offset {i}")
        # bulk-copy until the next brace
        j = i
        while j < n and body[j] not in "{}":
            j += 1
        out.append(body[i:j])
        i = j
    return "".join(out)


def render(template_id: str, slots: dict[str, str]) -> str:
    """Render a library template. Slot keys must equal required_slots exactly."""
    template = load_template(template_id)
    provided = set(slots)
    missing = template.required_slots - provided
    if missing:
        raise MissingSlot(f"{template_id}: missing slots {sorted(missing)}")
    extra = provided - template.required_slots
    if extra:
        raise UnknownSlot(f"{template_id}: unknown slots {sorted(extra)}")
    for key, value in slots.items():
        if not isinstance(value, str):
            raise UnknownSlot(f"{template_id}: slot {key!r} must be a string")
    return render_body(template.body, slots, template_id=template_id)
