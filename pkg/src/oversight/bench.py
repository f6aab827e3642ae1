"""Batch driver: run many elicitation sessions, score the documents, aggregate.

Produces a report bundle under a runs directory: per-case session artifacts,
alignment curves over checkpoints, turn metrics, and means across cases.
Scripted backends plus a fixed clock make the bundle byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .config import AppConfig, ConfigError, build_gateway, load_config
from .engine import Engine, deterministic_session_id
from .evaluator import ContainmentJudge, LlmJudge, evaluate_prd, load_rubric_tree
from .gateway import EchoBackend, Gateway, StaticBackend
from .rewards import user_reward
from .simulator import LlmUser, PlaybookBackend, load_oracle_rules, load_playbooks
from .storage import SessionStore, atomic_write_text

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "BenchCase",
    "BenchBackend",
    "BenchConfig",
    "BenchError",
    "IntentSetMismatch",
    "load_bench_config",
    "run_benchmark",
    "compare_methods",
    "render_comparison",
    "main",
]

MODULE_NAMES = (
    "Product Overview",
    "Core Functional Modules",
    "Non-functional Requirements",
    "User Experience Design",
    "Business Rules",
)


class BenchError(Exception):
    pass


class IntentSetMismatch(BenchError):
    pass


@dataclass(frozen=True)
class BenchCase:
    name: str
    intent: Path
    oracle: Path | None = None
    rubrics: Path | None = None


@dataclass(frozen=True)
class BenchBackend:
    kind: str = "scripted"  # scripted | live
    playbooks: Path | None = None
    init_tree: Path | None = None
    updater: Path | None = None
    config_file: Path | None = None

    def __post_init__(self):
        if self.kind not in ("scripted", "live"):
            raise BenchError(f"backend kind must be scripted or live, got {self.kind!r}")
        if self.kind == "scripted" and (self.playbooks is None or self.init_tree is None):
            raise BenchError("scripted backend needs playbooks and init_tree")


@dataclass(frozen=True)
class BenchConfig:
    cases: tuple[BenchCase, ...]
    backend: BenchBackend
    cadence: int = 0
    seed: int = 0
    workers: int = 2
    turn_cap: int = 12
    runs_root: Path = Path("runs")

    def __post_init__(self):
        if not self.cases:
            raise BenchError("at least one case is required")
        names = [c.name for c in self.cases]
        if len(set(names)) != len(names):
            raise BenchError("case names must be unique")
        if self.workers < 1:
            raise BenchError("workers must be >= 1")


def _as_path(base: Path, value) -> Path:
    p = Path(str(value))
    return p if p.is_absolute() else base / p


def load_bench_config(path: str | Path) -> BenchConfig:
    path = Path(path)
    if not path.exists():
        raise BenchError(f"bench config not found: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    elif path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
    else:
        raise BenchError(f"bench config must be .toml or .json, got {path.name}")
    base = path.parent

    bench = doc.get("bench", {})
    raw_backend = doc.get("backend", {})
    backend = BenchBackend(
        kind=str(raw_backend.get("kind", "scripted")),
        playbooks=_as_path(base, raw_backend["playbooks"]) if "playbooks" in raw_backend else None,
        init_tree=_as_path(base, raw_backend["init_tree"]) if "init_tree" in raw_backend else None,
        updater=_as_path(base, raw_backend["updater"]) if "updater" in raw_backend else None,
        config_file=_as_path(base, raw_backend["config_file"]) if "config_file" in raw_backend else None,
    )
    cases = []
    for raw in doc.get("cases", []):
        if "name" not in raw or "intent" not in raw:
            raise BenchError("every case needs a name and an intent file")
        cases.append(BenchCase(
            name=str(raw["name"]),
            intent=_as_path(base, raw["intent"]),
            oracle=_as_path(base, raw["oracle"]) if "oracle" in raw else None,
            rubrics=_as_path(base, raw["rubrics"]) if "rubrics" in raw else None,
        ))
    return BenchConfig(
        cases=tuple(cases),
        backend=backend,
        cadence=int(bench.get("cadence", 0)),
        seed=int(bench.get("seed", 0)),
        workers=int(bench.get("workers", 2)),
        turn_cap=int(bench.get("turn_cap", 12)),
        runs_root=_as_path(base, bench.get("runs_root", "runs")),
    )


def _case_gateway(backend: BenchBackend, clock) -> Gateway:
    if backend.kind == "scripted":
        updater_text = "NO_CHANGES_NEEDED"
        if backend.updater is not None:
            updater_text = backend.updater.read_text(encoding="utf-8")
        return Gateway({
            "interaction_policy": PlaybookBackend(
                load_playbooks(backend.playbooks),
                backend.init_tree.read_text(encoding="utf-8")),
            "tree_updater": StaticBackend(updater_text),
            "doc_generator": EchoBackend(),
        }, clock=clock)
    app_config = load_config(backend.config_file)
    return build_gateway(app_config)


def _score_documents(case: BenchCase, backend: BenchBackend,
                     gateway: Gateway, session) -> tuple[list[dict], dict | None]:
    """Alignment over every checkpoint plus the final document."""
    if case.rubrics is None:
        return [], None
    rubric_tree, _ = load_rubric_tree(case.rubrics)
    judge = ContainmentJudge() if backend.kind == "scripted" else LlmJudge(gateway)
    curve = []
    for k, text in session.checkpoint_prds:
        report = evaluate_prd(text, rubric_tree, judge)
        curve.append({"k": k, "overall": report.overall})
    final = evaluate_prd(session.prd, rubric_tree, judge)
    curve.append({"k": len(session.context), "overall": final.overall})
    return curve, final.to_dict()


def run_case(case: BenchCase, config: BenchConfig, store_root: Path, clock) -> dict:
    query = case.intent.read_text(encoding="utf-8").strip()
    if not query:
        raise BenchError(f"intent file {case.intent} is empty")
    gateway = _case_gateway(config.backend, clock)
    engine = Engine(gateway, store=SessionStore(store_root),
                    turn_cap=config.turn_cap, clock=clock,
                    id_factory=deterministic_session_id)

    if case.oracle is not None:
        user = load_oracle_rules(case.oracle)
    elif config.backend.kind == "live":
        user = LlmUser(gateway, query)
    else:
        raise BenchError(f"case {case.name!r} has no oracle and backend is scripted")

    session = engine.run(query, user, checkpoint_cadence=config.cadence)
    checkpoints, final = _score_documents(case, config.backend, gateway, session)
    kinds = tuple(t.parsed.kind for ns in session.node_sessions for t in ns.turns)
    return {
        "name": case.name,
        "status": "ok",
        "error": None,
        "session_id": session.id,
        "metrics": session.metrics(),
        "checkpoints": checkpoints,
        "alignment": final,
        "rewards": {
            "user_reward": user_reward(kinds) if kinds else None,
            "outcome_reward": final["overall"] if final else None,
        },
    }


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def _aggregate(case_results: list[dict]) -> dict:
    ok = [c for c in case_results if c["status"] == "ok"]
    scored = [c for c in ok if c["alignment"] is not None]
    per_module: dict[str, float | None] = {}
    for module in MODULE_NAMES:
        values = [c["alignment"]["per_module"][module]
                  for c in scored if module in c["alignment"]["per_module"]]
        per_module[module] = _mean(values)
    return {
        "ok": len(ok),
        "failed": len(case_results) - len(ok),
        "overall_mean": _mean([c["alignment"]["overall"] for c in scored]),
        "per_module_mean": per_module,
        "total_turns_mean": _mean([float(c["metrics"]["total_turns"]) for c in ok]),
        "avg_turns_per_node_mean": _mean(
            [c["metrics"]["avg_turns_per_node"] for c in ok
             if c["metrics"]["avg_turns_per_node"] is not None]),
    }


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.3f}"


def render_report_markdown(report: dict) -> str:
    lines = ["# Benchmark report", ""]
    header = report["header"]
    lines.append(f"- seed: {header['seed']}")
    lines.append(f"- cadence: {header['cadence']}")
    lines.append(f"- backend: {header['backend']}")
    lines.append(f"- cases: {', '.join(header['cases'])}")
    lines.extend(["", "## Alignment", ""])
    lines.append("| Case | " + " | ".join(MODULE_NAMES) + " | Overall | Turns |")
    lines.append("|" + " --- |" * (len(MODULE_NAMES) + 3))
    for case in report["cases"]:
        if case["status"] != "ok":
            lines.append(f"| {case['name']} | failed: {case['error']} |" +
                         " |" * (len(MODULE_NAMES) + 1))
            continue
        alignment = case["alignment"] or {"per_module": {}, "overall": None}
        cells = [_fmt(alignment["per_module"].get(m)) for m in MODULE_NAMES]
        lines.append(
            f"| {case['name']} | " + " | ".join(cells) +
            f" | {_fmt(alignment['overall'])} | {case['metrics']['total_turns']} |")
    aggregate = report["aggregate"]
    mean_cells = [_fmt(aggregate["per_module_mean"][m]) for m in MODULE_NAMES]
    lines.append("| **mean** | " + " | ".join(mean_cells) +
                 f" | {_fmt(aggregate['overall_mean'])} | "
                 f"{_fmt(aggregate['total_turns_mean'])} |")

    curves = [c for c in report["cases"] if c["status"] == "ok" and c["checkpoints"]]
    if curves:
        lines.extend(["", "## Score over completed nodes", ""])
        for case in curves:
            points = ", ".join(
                f"k={p['k']}: {p['overall']:.3f}" for p in case["checkpoints"])
            lines.append(f"- {case['name']}: {points}")
    return "\n".join(lines) + "\n"


def run_benchmark(config: BenchConfig, *, out_dir: str | Path | None = None,
                  clock=None) -> dict:
    """Execute every case, write the report bundle, return the report dict."""
    if clock is None:
        clock = (lambda: 0.0) if config.backend.kind == "scripted" else time.time
    if out_dir is None:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        out_dir = config.runs_root / stamp
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def guarded(case: BenchCase) -> dict:
        try:
            return run_case(case, config, out_dir / "cases" / case.name, clock)
        except Exception as err:  # noqa: BLE001 - partial failure is reported, not raised
            return {"name": case.name, "status": "failed",
                    "error": f"{type(err).__name__}: {err}",
                    "session_id": None, "metrics": None,
                    "checkpoints": [], "alignment": None, "rewards": None}

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        case_results = list(pool.map(guarded, config.cases))

    report = {
        "header": {
            "seed": config.seed,
            "cadence": config.cadence,
            "backend": config.backend.kind,
            "cases": [c.name for c in config.cases],
            "generated_at": clock(),
        },
        "cases": case_results,
        "aggregate": _aggregate(case_results),
    }
    atomic_write_text(out_dir / "report.json",
                      json.dumps(report, ensure_ascii=False, indent=2) + "\n")
    atomic_write_text(out_dir / "report.md", render_report_markdown(report))
    return report


# -- cross-report comparison ---------------------------------------------------------


def _columns(report: dict) -> dict[str, float | None]:
    aggregate = report["aggregate"]
    columns = dict(aggregate["per_module_mean"])
    columns["Overall"] = aggregate["overall_mean"]
    return columns


def compare_methods(reports: list[dict], labels: list[str] | None = None) -> dict:
    """Column-wise deltas of aggregate means against the first report."""
    if len(reports) < 2:
        raise BenchError("need at least two reports to compare")
    if labels is None:
        labels = [f"report{i}" for i in range(len(reports))]
    if len(labels) != len(reports):
        raise BenchError("one label per report required")

    intent_sets = [tuple(sorted(r["header"]["cases"])) for r in reports]
    if len(set(intent_sets)) != 1:
        raise IntentSetMismatch(f"reports cover different intent sets: {intent_sets}")

    baseline = _columns(reports[0])
    rows = []
    for label, report in zip(labels, reports):
        columns = _columns(report)
        deltas = {}
        for name, value in columns.items():
            base = baseline[name]
            deltas[name] = None if value is None or base is None else value - base
        rows.append({"label": label, "values": columns, "deltas": deltas})

    best: dict[str, str | None] = {}
    for name in baseline:
        candidates = [(row["values"][name], row["label"]) for row in rows
                      if row["values"][name] is not None]
        best[name] = max(candidates)[1] if candidates else None
    return {"baseline": labels[0], "columns": list(baseline), "rows": rows, "best": best}


def render_comparison(result: dict) -> str:
    columns = result["columns"]
    lines = ["| Method | " + " | ".join(columns) + " |",
             "|" + " --- |" * (len(columns) + 1)]
    for row in result["rows"]:
        cells = []
        for name in columns:
            value = row["values"][name]
            delta = row["deltas"][name]
            text = _fmt(value)
            if delta is not None and row["label"] != result["baseline"]:
                text += f" ({delta:+.3f})"
            if result["best"][name] == row["label"]:
                text = f"**{text}**"
            cells.append(text)
        lines.append(f"| {row['label']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python3 -m oversight.bench",
        description="run the benchmark described by a bench config file")
    parser.add_argument("config", help="bench TOML or JSON")
    parser.add_argument("--out", help="report directory (default runs/<timestamp>)")
    args = parser.parse_args(argv)
    try:
        config = load_bench_config(args.config)
        report = run_benchmark(config, out_dir=args.out)
    except (BenchError, ConfigError, OSError) as err:
        print(json.dumps({"code": type(err).__name__, "message": str(err),
                          "detail": None}), file=sys.stderr)
        return 1
    aggregate = report["aggregate"]
    print(json.dumps({"ok": aggregate["ok"], "failed": aggregate["failed"],
                      "overall_mean": aggregate["overall_mean"]}))
    return 0 if aggregate["ok"] > 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
