"""Rubric-based document judging and alignment aggregation.

Scoring runs in two stages: the document is split into the five module parts,
then each part is scored against that module's rubrics on the {0, 0.5, 1}
scale. The overall score pools every rubric with equal weight; module means
are reported separately. Judges are pluggable: LlmJudge drives the judge model
through the gateway, ContainmentJudge is the deterministic offline stand-in.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .gateway import Gateway
from .prompts import render
from .tree import CANONICAL_ROOTS, MalformedTree, extract_json_object, normalize_title

__all__ = [
    "EvaluatorError",
    "JudgeParseError",
    "EmptyRubricSet",
    "IdMismatch",
    "Rubric",
    "RubricTree",
    "RubricScore",
    "SplitDocument",
    "AlignmentReport",
    "Judge",
    "ContainmentJudge",
    "LlmJudge",
    "LEGAL_SCORES",
    "parse_judge_json",
    "rubric_parts",
    "coerce_score",
    "assign_rubrics",
    "alignment_score",
    "judge_agreement",
    "evaluate_prd",
    "load_rubric_tree",
]

LEGAL_SCORES = (0.0, 0.5, 1.0)

DEFAULT_MODULE = "Core Functional Modules"


class EvaluatorError(Exception):
    pass


class JudgeParseError(EvaluatorError):
    pass


class EmptyRubricSet(EvaluatorError):
    pass


class IdMismatch(EvaluatorError):
    pass


# -- domain types --------------------------------------------------------------


@dataclass(frozen=True)
class Rubric:
    id: str
    text: str

    @property
    def domain(self) -> str:
        return rubric_parts(self.text)[0]

    @property
    def requirement(self) -> str:
        return rubric_parts(self.text)[1]


@dataclass
class RubricTree:
    """Exactly five module buckets; every rubric lives in one, ids unique."""

    modules: dict[str, tuple[Rubric, ...]]

    def __post_init__(self):
        if len(self.modules) != 5:
            raise ValueError(f"rubric tree needs 5 modules, got {len(self.modules)}")
        seen: set[str] = set()
        for rubrics in self.modules.values():
            for rubric in rubrics:
                if rubric.id in seen:
                    raise ValueError(f"duplicate rubric id {rubric.id!r}")
                seen.add(rubric.id)

    @property
    def all_rubrics(self) -> list[Rubric]:
        return [r for rubrics in self.modules.values() for r in rubrics]

    @property
    def size(self) -> int:
        return sum(len(rubrics) for rubrics in self.modules.values())


@dataclass(frozen=True)
class RubricScore:
    rubric_id: str
    value: float
    judge_rationale: str | None = None

    def __post_init__(self):
        if self.value not in LEGAL_SCORES:
            raise ValueError(f"illegal rubric score {self.value!r}")


@dataclass(frozen=True)
class SplitDocument:
    parts: dict[str, str]


@dataclass
class AlignmentReport:
    per_module: dict[str, float]
    overall: float
    scores: list[RubricScore]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_module": dict(self.per_module),
            "overall": self.overall,
            "scores": [
                {"rubric_id": s.rubric_id, "value": s.value,
                 "judge_rationale": s.judge_rationale}
                for s in self.scores
            ],
            "warnings": list(self.warnings),
        }

    def to_markdown(self) -> str:
        lines = ["| Module | Score |", "| --- | --- |"]
        for name, value in self.per_module.items():
            lines.append(f"| {name} | {value:.3f} |")
        lines.append(f"| **Overall** | **{self.overall:.3f}** |")
        return "\n".join(lines)


# -- rubric text handling -------------------------------------------------------

_RUBRIC_RE = re.compile(r"^\s*\[(?P<domain>[^\]]*)\]\s*-\s*\[?(?P<req>.*?)\]?\s*$", re.DOTALL)


def rubric_parts(text: str) -> tuple[str, str]:
    """Split "[Domain] - [requirement]" into its halves; lenient on brackets."""
    m = _RUBRIC_RE.match(text)
    if m:
        return m.group("domain").strip(), m.group("req").strip()
    return "", text.strip()


def coerce_score(value) -> tuple[float | None, bool]:
    """Snap a judge-emitted value onto {0, 0.5, 1}.

    Returns (legal value, was_coerced); (None, True) for non-numeric input.
    Out-of-range values are clamped; off-grid values go to the nearest legal
    value, ties downward.
    """
    try:
        v = float(value)
    except (TypeError, ValueError):
        return None, True
    if v != v:  # NaN
        return None, True
    snapped = v in LEGAL_SCORES
    if not snapped:
        v = min(1.0, max(0.0, v))
        v = min(LEGAL_SCORES, key=lambda legal: (abs(v - legal), legal))
    return v, not snapped


# -- judge output parsing -------------------------------------------------------


def _strip_fences(text: str) -> str:
    lines = text.strip().splitlines()
    if lines and lines[0].startswith("```"):
        lines = lines[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
    return "\n".join(lines).strip()


def _escape_repair(text: str, max_fixes: int = 120):
    # Escapes the quote that prematurely closed a string, one per pass.
    for _ in range(max_fixes):
        try:
            return json.loads(text)
        except json.JSONDecodeError as err:
            cut = text.rfind('"', 0, err.pos)
            if cut <= 0:
                raise
            text = text[:cut] + "\\" + text[cut:]
    raise json.JSONDecodeError("quote repair exhausted", text, 0)


def parse_judge_json(text: str):
    """Total-effort JSON recovery: direct, fence-stripped, extracted, repaired."""
    candidates = [text.strip()]
    stripped = _strip_fences(text)
    if stripped and stripped != candidates[0]:
        candidates.append(stripped)
    try:
        extracted = extract_json_object(text)
    except MalformedTree:
        extracted = None
    if extracted and extracted not in candidates:
        candidates.append(extracted)

    first_error: Exception | None = None
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except json.JSONDecodeError as err:
            first_error = first_error or err
    for candidate in candidates:
        try:
            return _escape_repair(candidate)
        except json.JSONDecodeError:
            pass
    raise JudgeParseError(f"no JSON object recoverable from judge output: {first_error}")


# -- judges ----------------------------------------------------------------------


class Judge(Protocol):
    def split(self, prd: str, module_names: Sequence[str]) -> tuple[SplitDocument, list[str]]:
        ...

    def score(self, part_text: str, rubrics: Sequence[Rubric]) -> tuple[list[RubricScore], list[str]]:
        ...


def _normalize_prose(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().lower()


class ContainmentJudge:
    """Deterministic judge: a rubric is satisfied iff its requirement text
    appears verbatim (case- and whitespace-insensitive) in the part. The split
    stage puts the whole document in every part, the degenerate reading of the
    duplication rule."""

    def split(self, prd: str, module_names: Sequence[str]) -> tuple[SplitDocument, list[str]]:
        return SplitDocument(parts={name: prd for name in module_names}), []

    def score(self, part_text: str, rubrics: Sequence[Rubric]) -> tuple[list[RubricScore], list[str]]:
        if not rubrics:
            raise ValueError("rubrics must be nonempty")
        haystack = _normalize_prose(part_text)
        scores = []
        for rubric in rubrics:
            needle = _normalize_prose(rubric.requirement)
            hit = bool(needle) and needle in haystack
            scores.append(RubricScore(rubric_id=rubric.id, value=1.0 if hit else 0.0))
        return scores, []


_REASK = (
    "The previous output was not valid JSON. Output the complete answer again "
    "as a single valid JSON object. Escape interior double quotes in string "
    'values as \\" and include no text outside the JSON.'
)

_CLASSIFY_PROMPT = """You are organizing product requirements. Assign each requirement below to exactly one of these modules:
{modules}

Respond with JSON only:
{{"assignments": {{"<requirement text>": "<module name>", ...}}}}

Requirements:
{items}"""


class LlmJudge:
    """Drives the judge model through the gateway with a one-re-ask repair loop."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def ask_json(self, template_id: str, slots: dict[str, str]) -> tuple[object, list[str]]:
        messages = [{"role": "system", "content": render(template_id, slots)}]
        exchange = self.gateway.complete("judge", messages)
        try:
            return parse_judge_json(exchange.response), []
        except JudgeParseError as first:
            retry_messages = messages + [
                {"role": "assistant", "content": exchange.response},
                {"role": "user", "content": _REASK},
            ]
            retry = self.gateway.complete("judge", retry_messages)
            try:
                parsed = parse_judge_json(retry.response)
            except JudgeParseError as second:
                raise JudgeParseError(
                    f"judge output unusable after one re-ask: {first}; retry: {second}"
                ) from second
            return parsed, [f"judge needed a re-ask for {template_id}"]

    def split(self, prd: str, module_names: Sequence[str]) -> tuple[SplitDocument, list[str]]:
        if not prd.strip():
            raise ValueError("document must be nonempty")
        if len(module_names) != 5:
            raise ValueError(f"expected 5 module names, got {len(module_names)}")
        parsed, warnings = self.ask_json("eval_split", {
            "modules_info": "\n".join(f"- {name}" for name in module_names),
            "md_content": prd,
        })
        if not isinstance(parsed, dict):
            raise JudgeParseError("split output is not a JSON object")
        by_key = {normalize_title(str(k)): v for k, v in parsed.items()}
        parts: dict[str, str] = {}
        for name in module_names:
            value = by_key.pop(normalize_title(name), None)
            if value is None:
                warnings.append(f"split omitted module {name!r}; filled with empty part")
                value = ""
            parts[name] = value if isinstance(value, str) else json.dumps(value)
        for stray in by_key:
            warnings.append(f"split produced unknown part {stray!r}; ignored")
        return SplitDocument(parts=parts), warnings

    def score(self, part_text: str, rubrics: Sequence[Rubric]) -> tuple[list[RubricScore], list[str]]:
        if not rubrics:
            raise ValueError("rubrics must be nonempty")
        parsed, warnings = self.ask_json("eval_module", {
            "rubrics": "\n".join(f"- {r.text}" for r in rubrics),
            "prd_doc": part_text,
        })
        mapping = parsed.get("eval") if isinstance(parsed, dict) else None
        if not isinstance(mapping, dict):
            if isinstance(parsed, dict) and parsed:
                # judge skipped the wrapper; tolerate a flat text -> value map
                mapping = {k: v for k, v in parsed.items() if k not in ("score", "reason")}
                warnings.append("judge omitted the eval wrapper; using the flat map")
            else:
                mapping = {}
                warnings.append("judge output has no eval map; all rubrics scored 0")

        by_key: dict[str, object] = {}
        for key, value in mapping.items():
            by_key[_normalize_prose(str(key))] = value

        scores = []
        matched_keys = set()
        for rubric in rubrics:
            keys = [_normalize_prose(rubric.text), _normalize_prose(rubric.requirement)]
            value = None
            for key in keys:
                if key in by_key:
                    value = by_key[key]
                    matched_keys.add(key)
                    break
            if value is None:
                warnings.append(f"rubric {rubric.id} missing from judge output; scored 0")
                scores.append(RubricScore(rubric_id=rubric.id, value=0.0))
                continue
            legal, coerced = coerce_score(value)
            if legal is None:
                warnings.append(
                    f"rubric {rubric.id} has non-numeric score {value!r}; scored 0")
                legal = 0.0
            elif coerced:
                warnings.append(
                    f"rubric {rubric.id} score {value!r} coerced to {legal}")
            scores.append(RubricScore(rubric_id=rubric.id, value=legal))
        for key in by_key:
            if key not in matched_keys:
                warnings.append(f"judge scored unknown rubric key {key!r}; ignored")
        return scores, warnings

    def generate_rubrics(self, reference_prd: str) -> tuple[RubricTree, list[str]]:
        if not reference_prd.strip():
            raise ValueError("reference document must be nonempty")
        parsed, warnings = self.ask_json("rubrics_gen", {"prd_doc": reference_prd})
        if not isinstance(parsed, dict) or not isinstance(parsed.get("rubrics"), list):
            raise JudgeParseError("rubric generation output lacks a 'rubrics' array")
        texts = [str(t) for t in parsed["rubrics"]]
        tree, assign_warnings = assign_rubrics(texts, classify=self._classify)
        return tree, warnings + assign_warnings

    def _classify(self, texts: Sequence[str]) -> dict[str, str]:
        prompt = _CLASSIFY_PROMPT.format(
            modules="\n".join(f"- {name}" for name in CANONICAL_ROOTS),
            items="\n".join(f"- {t}" for t in texts),
        )
        exchange = self.gateway.complete("judge", [{"role": "system", "content": prompt}])
        try:
            parsed = parse_judge_json(exchange.response)
        except JudgeParseError:
            return {}
        assignments = parsed.get("assignments") if isinstance(parsed, dict) else None
        if not isinstance(assignments, dict):
            return {}
        by_title = {normalize_title(name): name for name in CANONICAL_ROOTS}
        out = {}
        for text, module in assignments.items():
            canonical = by_title.get(normalize_title(str(module)))
            if canonical:
                out[str(text)] = canonical
        return out


# -- rubric-to-module assignment --------------------------------------------------

# Ordered: first matching rule wins. Non-functional precedes core so that
# "non-functional" never falls through to the bare "function" keyword.
_MODULE_RULES = (
    (re.compile(
        r"non.?functional|performance|security|privacy|availab|scalab|reliab|"
        r"latency|load time|speed|backup|uptime|capacity|response time|recovery",
        re.IGNORECASE), "Non-functional Requirements"),
    (re.compile(
        r"business|pricing|licens|payment|subscription|billing|revenue|monetiz|"
        r"policy|legal|commission|compliance|tier|refund",
        re.IGNORECASE), "Business Rules"),
    (re.compile(
        r"\bux\b|\bui\b|user experience|interaction|design|interface|usability|"
        r"navigation|visual|layout|accessib|onboarding|experience",
        re.IGNORECASE), "User Experience Design"),
    (re.compile(
        r"overview|positioning|vision|audience|market|goal|mission|objective|"
        r"target user|persona|scope|summary",
        re.IGNORECASE), "Product Overview"),
    (re.compile(
        r"function|feature|module|core|capabilit|workflow|search|content|data|"
        r"tool|editor|integration|api|system|management",
        re.IGNORECASE), "Core Functional Modules"),
)


def _match_module(text: str) -> str | None:
    domain, _ = rubric_parts(text)
    probe = domain or text
    for pattern, module in _MODULE_RULES:
        if pattern.search(probe):
            return module
    return None


def assign_rubrics(texts: Sequence[str], classify=None) -> tuple[RubricTree, list[str]]:
    """Bucket flat rubric texts into the five modules by domain-tag keywords.

    classify, if given, is called once with the unmatched texts and may return
    {text: module name}; anything still unmatched lands in the core module.
    """
    ids = [f"r{i + 1:03d}" for i in range(len(texts))]
    assigned: dict[str, str] = {}
    unmatched: list[str] = []
    for text in texts:
        module = _match_module(text)
        if module:
            assigned[text] = module
        else:
            unmatched.append(text)

    warnings: list[str] = []
    if unmatched and classify is not None:
        for text, module in classify(unmatched).items():
            if text in texts and module in CANONICAL_ROOTS:
                assigned[text] = module
        unmatched = [t for t in unmatched if t not in assigned]
    for text in unmatched:
        assigned[text] = DEFAULT_MODULE
        warnings.append(f"rubric not classifiable, defaulted to {DEFAULT_MODULE}: {text[:60]!r}")

    modules: dict[str, list[Rubric]] = {name: [] for name in CANONICAL_ROOTS}
    for rubric_id, text in zip(ids, texts):
        modules[assigned[text]].append(Rubric(id=rubric_id, text=text))
    return RubricTree(modules={k: tuple(v) for k, v in modules.items()}), warnings


# -- aggregation -------------------------------------------------------------------


def _effective(value: float, strict_indicator: bool) -> float:
    if strict_indicator:
        return 1.0 if value == 1.0 else 0.0
    return value


def alignment_score(
    scores_by_module: Mapping[str, Sequence[RubricScore]],
    *,
    strict_indicator: bool = False,
) -> AlignmentReport:
    """Pooled mean over every rubric, plus per-module means.

    strict_indicator restricts credit to fully satisfied rubrics (0/1), the
    pure-indicator reading of the alignment formula.
    """
    pooled: list[float] = []
    per_module: dict[str, float] = {}
    all_scores: list[RubricScore] = []
    for name, scores in scores_by_module.items():
        if not scores:
            continue
        values = [_effective(s.value, strict_indicator) for s in scores]
        per_module[name] = sum(values) / len(values)
        pooled.extend(values)
        all_scores.extend(scores)
    if not pooled:
        raise EmptyRubricSet("no rubric scores to aggregate")
    return AlignmentReport(
        per_module=per_module,
        overall=sum(pooled) / len(pooled),
        scores=all_scores,
    )


def judge_agreement(score_sets: Sequence[Sequence[RubricScore]]) -> list[list[float]]:
    """Pairwise fraction of rubrics given identical values; diagonal 1."""
    if len(score_sets) < 2:
        raise IdMismatch("need at least two scorings to compare")
    maps = []
    for scores in score_sets:
        m = {s.rubric_id: s.value for s in scores}
        if len(m) != len(scores):
            raise IdMismatch("duplicate rubric ids within one scoring")
        maps.append(m)
    ids = sorted(maps[0])
    for m in maps[1:]:
        if sorted(m) != ids:
            raise IdMismatch("scorings cover different rubric id sets")
    if not ids:
        raise IdMismatch("empty scorings cannot be compared")

    n = len(maps)
    matrix = [[1.0] * n for _ in range(n)]
    for a in range(n):
        for b in range(a + 1, n):
            hits = sum(1 for rid in ids if maps[a][rid] == maps[b][rid])
            matrix[a][b] = matrix[b][a] = hits / len(ids)
    return matrix


def evaluate_prd(
    prd: str,
    rubric_tree: RubricTree,
    judge: Judge,
    *,
    strict_indicator: bool = False,
) -> AlignmentReport:
    """Two-stage scoring: split into module parts, score each, aggregate."""
    if not prd.strip():
        raise ValueError("document must be nonempty")
    if rubric_tree.size == 0:
        raise EmptyRubricSet("rubric tree has no rubrics")
    module_names = list(rubric_tree.modules)
    split, warnings = judge.split(prd, module_names)
    scores_by_module: dict[str, list[RubricScore]] = {}
    for name in module_names:
        rubrics = rubric_tree.modules[name]
        if not rubrics:
            continue
        scores, score_warnings = judge.score(split.parts.get(name, ""), rubrics)
        scores_by_module[name] = scores
        warnings.extend(score_warnings)
    report = alignment_score(scores_by_module, strict_indicator=strict_indicator)
    report.warnings = warnings
    return report


# -- rubric file loading ------------------------------------------------------------


def _flatten_features(node: dict) -> list[str]:
    texts = [str(f) for f in node.get("features", [])]
    subs = node.get("submodules", {})
    if isinstance(subs, dict):
        for sub in subs.values():
            if isinstance(sub, dict):
                texts.extend(_flatten_features(sub))
    return texts


def load_rubric_tree(path: str | Path) -> tuple[RubricTree, list[str]]:
    """Load a rubric file in any of the three accepted shapes.

    {"rubrics": [...]}: flat texts, bucketed by domain keywords.
    {"modules": {name: [text, ...]}}: explicit five-module layout.
    {"rubrics_tree": [{name: {description, submodules, features}}]}: nested
    module trees whose leaf features become the rubric texts.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"rubric file {path} must be a JSON object")

    if "rubrics" in doc:
        return assign_rubrics([str(t) for t in doc["rubrics"]])

    if "modules" in doc:
        raw = doc["modules"]
        if not isinstance(raw, dict) or len(raw) != 5:
            raise ValueError(f"rubric file {path} must map exactly 5 modules")
        counter = 0
        modules: dict[str, tuple[Rubric, ...]] = {}
        for name, texts in raw.items():
            rubrics = []
            for text in texts:
                counter += 1
                rubrics.append(Rubric(id=f"r{counter:03d}", text=str(text)))
            modules[name] = tuple(rubrics)
        return RubricTree(modules=modules), []

    if "rubrics_tree" in doc:
        by_title = {normalize_title(name): name for name in CANONICAL_ROOTS}
        collected: dict[str, list[str]] = {name: [] for name in CANONICAL_ROOTS}
        warnings = []
        entries = doc["rubrics_tree"]
        if isinstance(entries, dict):
            entries = [entries]
        for entry in entries:
            for raw_name, node in entry.items():
                canonical = by_title.get(normalize_title(raw_name))
                if canonical is None:
                    warnings.append(f"unknown rubric module {raw_name!r} skipped")
                    continue
                if isinstance(node, dict):
                    collected[canonical].extend(_flatten_features(node))
        counter = 0
        modules = {}
        for name in CANONICAL_ROOTS:
            rubrics = []
            for text in collected[name]:
                counter += 1
                rubrics.append(Rubric(id=f"r{counter:03d}", text=text))
            modules[name] = tuple(rubrics)
        return RubricTree(modules=modules), warnings

    raise ValueError(f"rubric file {path} has none of the accepted layouts")
