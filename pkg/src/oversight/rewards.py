"""Reward computation over recorded interaction traces.

Three signals per sequence: the user-burden penalty (fraction of DontCare
answers, negated), a binary per-node progress score from the judge, and the
query-shared outcome score (alignment of the final document). Terminal reward
is their weighted sum; groups of sequences for the same query are baselined by
mean subtraction and expanded into whitened per-token advantage rows.

Everything here is pure float64 arithmetic with fixed reduction order, so
equal inputs produce bit-equal outputs. Token counts and EOS positions are
caller-supplied; no tokenizer is involved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluator import JudgeParseError, Judge, RubricTree, evaluate_prd
from .feedback import KINDS, parse_feedback
from .storage import atomic_write_bytes, atomic_write_text

__all__ = [
    "RewardError",
    "NoUserTurns",
    "LengthMismatch",
    "EmptyBatch",
    "TraceSequence",
    "TraceGroup",
    "RewardBreakdown",
    "AdvantageTensor",
    "EPSILON",
    "OUTCOME_WEIGHT",
    "user_reward",
    "outcome_reward",
    "progressive_reward",
    "combine_rewards",
    "group_baseline",
    "token_advantages",
    "kinds_from_transcript",
    "load_traces",
    "group_traces",
    "write_rewards_json",
    "write_advantages",
    "read_advantages",
]

EPSILON = 1e-8
OUTCOME_WEIGHT = 0.5


class RewardError(Exception):
    pass


class NoUserTurns(RewardError):
    pass


class LengthMismatch(RewardError):
    pass


class EmptyBatch(RewardError):
    pass


# -- trace types -----------------------------------------------------------------


@dataclass(frozen=True)
class TraceSequence:
    """One training sequence: token geometry plus the user feedback kinds."""

    query_id: str
    seq_index: int
    token_count: int
    eos_position: int
    user_turn_feedback: tuple[str, ...] = ()

    def __post_init__(self):
        if self.token_count <= 0:
            raise ValueError(f"token_count must be positive, got {self.token_count}")
        if not 0 <= self.eos_position < self.token_count:
            raise ValueError(
                f"eos_position {self.eos_position} outside [0, {self.token_count})")
        for kind in self.user_turn_feedback:
            if kind not in KINDS:
                raise ValueError(f"unknown feedback kind {kind!r}")

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.token_count, dtype=bool)
        m[: self.eos_position + 1] = True
        return m


@dataclass(frozen=True)
class TraceGroup:
    query_id: str
    sequences: tuple[TraceSequence, ...]

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("a trace group needs at least one sequence")
        for seq in self.sequences:
            if seq.query_id != self.query_id:
                raise ValueError(
                    f"sequence {seq.seq_index} belongs to query {seq.query_id!r}, "
                    f"not {self.query_id!r}")


@dataclass
class RewardBreakdown:
    seq_index: int
    UR: float
    PR: float
    OR: float
    terminal: float
    r_tilde: float | None = None


@dataclass(frozen=True)
class AdvantageTensor:
    """Rectangular row-major float64 advantages; rows padded past each EOS."""

    values: np.ndarray
    mask: np.ndarray
    eos_positions: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.values.shape)


# -- reward signals -----------------------------------------------------------------


def user_reward(seq: TraceSequence | Sequence[str]) -> float:
    """Negated DontCare fraction over the sequence's user turns; in [-1, 0]."""
    kinds = seq.user_turn_feedback if isinstance(seq, TraceSequence) else tuple(seq)
    if not kinds:
        raise NoUserTurns("sequence has no user turns to score")
    dont_care = sum(1 for kind in kinds if kind == "dont_care")
    return -dont_care / len(kinds)


def outcome_reward(
    prd: str,
    rubric_tree: RubricTree,
    judge: Judge,
    *,
    strict_indicator: bool = False,
) -> float:
    """Alignment of the final document, shared by all sequences of the query."""
    return evaluate_prd(prd, rubric_tree, judge,
                        strict_indicator=strict_indicator).overall


def _render_history(prior_summaries: Sequence[str]) -> str:
    if not prior_summaries:
        return "(none)"
    return "\n\n".join(
        f"{i + 1}. {summary}" for i, summary in enumerate(prior_summaries))


def progressive_reward(
    judge,
    node_summary: str,
    prior_summaries: Sequence[str],
    rubric_features: Sequence[str],
) -> tuple[int, list[str]]:
    """Binary judge verdict: did this node's dialogue improve feature coverage?

    judge must expose ask_json (the LlmJudge re-ask contract). Returns the
    score with any parse warnings.
    """
    parsed, warnings = judge.ask_json("progressive_reward", {
        "node_document": node_summary,
        "history_summary": _render_history(prior_summaries),
        "features_text": "\n".join(f"- {f}" for f in rubric_features),
    })
    raw = parsed.get("score") if isinstance(parsed, dict) else None
    try:
        value = int(float(raw))
    except (TypeError, ValueError):
        raise JudgeParseError(f"progress judge score is not 0 or 1: {raw!r}")
    if value not in (0, 1) or float(raw) != value:
        raise JudgeParseError(f"progress judge score is not 0 or 1: {raw!r}")
    return value, warnings


# -- combination and baselining --------------------------------------------------------


def combine_rewards(
    group: TraceGroup,
    user_rewards: Sequence[float],
    progress_rewards: Sequence[float],
    outcome: float,
) -> tuple[list[RewardBreakdown], float]:
    """Per-sequence terminals plus the query-level aggregate.

    terminal_i = PR_i + UR_i + 0.5 * OR; the aggregate is the printed combined
    form sum(PR + UR)/n + 0.5 * OR. r_tilde is filled by group-mean baseline.
    """
    n = len(group.sequences)
    if len(user_rewards) != n or len(progress_rewards) != n:
        raise LengthMismatch(
            f"group has {n} sequences but {len(user_rewards)} user rewards "
            f"and {len(progress_rewards)} progress rewards")
    for ur in user_rewards:
        if not -1.0 <= ur <= 0.0:
            raise ValueError(f"user reward {ur} outside [-1, 0]")
    for pr in progress_rewards:
        if pr not in (0, 1):
            raise ValueError(f"progress reward {pr} is not binary")
    if not 0.0 <= outcome <= 1.0:
        raise ValueError(f"outcome reward {outcome} outside [0, 1]")

    terminals = [
        float(pr) + float(ur) + OUTCOME_WEIGHT * outcome
        for ur, pr in zip(user_rewards, progress_rewards)
    ]
    baselined = group_baseline(terminals)
    breakdowns = [
        RewardBreakdown(
            seq_index=seq.seq_index,
            UR=float(ur),
            PR=float(pr),
            OR=float(outcome),
            terminal=terminal,
            r_tilde=r_tilde,
        )
        for seq, ur, pr, terminal, r_tilde in zip(
            group.sequences, user_rewards, progress_rewards, terminals, baselined)
    ]
    aggregate = sum(
        float(pr) + float(ur) for ur, pr in zip(user_rewards, progress_rewards)
    ) / n + OUTCOME_WEIGHT * outcome
    return breakdowns, aggregate


def group_baseline(terminal_rewards: Sequence[float]) -> list[float]:
    """Mean-subtract within the group; a singleton group baselines to zero."""
    if not terminal_rewards:
        raise ValueError("cannot baseline an empty group")
    mean = sum(terminal_rewards) / len(terminal_rewards)
    return [float(r) - mean for r in terminal_rewards]


def token_advantages(
    sequences: Sequence[TraceSequence],
    r_tilde: Sequence[float],
    epsilon: float = EPSILON,
) -> AdvantageTensor:
    """Expand baselined sequence rewards into whitened per-token advantages.

    The raw return at (i, t) is r_tilde[i] for t <= T_i, else 0. Whitening
    statistics (mean, population std) are taken over masked positions only;
    a zero-variance batch degrades to all-zero advantages.
    """
    if not sequences:
        raise EmptyBatch("no sequences to expand")
    if len(r_tilde) != len(sequences):
        raise LengthMismatch(
            f"{len(sequences)} sequences but {len(r_tilde)} baselined rewards")

    n = len(sequences)
    width = max(seq.token_count for seq in sequences)
    mask = np.zeros((n, width), dtype=bool)
    for i, seq in enumerate(sequences):
        mask[i, : seq.eos_position + 1] = True

    rewards = np.asarray(r_tilde, dtype=np.float64)
    returns = np.where(mask, rewards[:, None], 0.0)

    # Masked positions hold r_tilde[i] repeated per row, so the whitening
    # moments reduce to count-weighted sums. fsum is exactly rounded, which
    # makes mu and sigma independent of sequence order in the batch.
    counts = [seq.eos_position + 1 for seq in sequences]
    total = sum(counts)
    mu = math.fsum(r * c for r, c in zip(rewards.tolist(), counts)) / total
    var = math.fsum((r - mu) ** 2 * c for r, c in zip(rewards.tolist(), counts)) / total
    sigma = math.sqrt(var)

    degenerate = all(r == rewards[0] for r in rewards) or sigma == 0.0
    if degenerate:
        values = np.zeros((n, width), dtype=np.float64)
    else:
        values = ((returns - mu) / (sigma + epsilon)) * mask
    return AdvantageTensor(
        values=values,
        mask=mask,
        eos_positions=tuple(seq.eos_position for seq in sequences),
    )


# -- trace loading ---------------------------------------------------------------------


def kinds_from_transcript(rows: Sequence[dict]) -> tuple[str, ...]:
    """Recount feedback kinds from recorded user rows of a session transcript."""
    return tuple(
        parse_feedback(row.get("response", "")).kind
        for row in rows
        if row.get("role") == "user"
    )


def load_traces(path: str | Path) -> list[TraceSequence]:
    """Trace JSONL: one sequence per line.

    Required: query_id, seq_index, token_count, eos_position. Feedback comes
    from either user_turn_feedback (kind names) or user_answers (raw strings,
    parsed here).
    """
    traces = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if "user_turn_feedback" in row:
                kinds = tuple(str(k) for k in row["user_turn_feedback"])
            elif "user_answers" in row:
                kinds = tuple(
                    parse_feedback(str(a)).kind for a in row["user_answers"])
            else:
                raise ValueError(
                    f"{path}:{line_no}: needs user_turn_feedback or user_answers")
            traces.append(TraceSequence(
                query_id=str(row["query_id"]),
                seq_index=int(row["seq_index"]),
                token_count=int(row["token_count"]),
                eos_position=int(row["eos_position"]),
                user_turn_feedback=kinds,
            ))
    return traces


def group_traces(traces: Sequence[TraceSequence]) -> list[TraceGroup]:
    """Group by query_id, first-seen order preserved."""
    buckets: dict[str, list[TraceSequence]] = {}
    for trace in traces:
        buckets.setdefault(trace.query_id, []).append(trace)
    return [
        TraceGroup(query_id=qid, sequences=tuple(seqs))
        for qid, seqs in buckets.items()
    ]


# -- artifact writers --------------------------------------------------------------------


def write_rewards_json(path: str | Path, query_id: str,
                       breakdowns: Sequence[RewardBreakdown]) -> None:
    payload = {
        "query_id": query_id,
        "sequences": [
            {
                "i": b.seq_index,
                "UR": b.UR,
                "PR": b.PR,
                "OR": b.OR,
                "terminal": b.terminal,
                "r_tilde": b.r_tilde,
            }
            for b in breakdowns
        ],
    }
    atomic_write_text(Path(path), json.dumps(payload, indent=2) + "\n")


def write_advantages(tensor: AdvantageTensor, bin_path: str | Path,
                     sidecar_path: str | Path | None = None) -> Path:
    """Row-major little-endian float64 blob plus a JSON sidecar."""
    bin_path = Path(bin_path)
    if sidecar_path is None:
        sidecar_path = bin_path.with_name(bin_path.name + ".json")
    data = np.ascontiguousarray(tensor.values, dtype="<f8").tobytes()
    atomic_write_bytes(bin_path, data)
    atomic_write_text(Path(sidecar_path), json.dumps({
        "shape": list(tensor.shape),
        "eos_positions": list(tensor.eos_positions),
    }, indent=2) + "\n")
    return Path(sidecar_path)


def read_advantages(bin_path: str | Path,
                    sidecar_path: str | Path | None = None) -> AdvantageTensor:
    bin_path = Path(bin_path)
    if sidecar_path is None:
        sidecar_path = bin_path.with_name(bin_path.name + ".json")
    meta = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    shape = tuple(meta["shape"])
    eos_positions = tuple(meta["eos_positions"])
    values = np.frombuffer(bin_path.read_bytes(), dtype="<f8").reshape(shape).copy()
    mask = np.zeros(shape, dtype=bool)
    for i, eos in enumerate(eos_positions):
        mask[i, : eos + 1] = True
    return AdvantageTensor(values=values, mask=mask, eos_positions=eos_positions)
