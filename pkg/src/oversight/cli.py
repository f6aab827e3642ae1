"""Command-line surface: session plumbing, batch runs, scoring, rewards, serving.

Every subcommand prints a JSON result on stdout; failures print
{code, message, detail} on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .config import AppConfig, ConfigError, build_gateway, load_config
from .engine import (
    AllComplete,
    Engine,
    EngineError,
    NodeComplete,
    Question,
    Session,
    session_from_dict,
)
from .evaluator import (
    ContainmentJudge,
    EvaluatorError,
    LlmJudge,
    evaluate_prd,
    load_rubric_tree,
)
from .gateway import (
    EchoBackend,
    Gateway,
    GatewayError,
    SequenceBackend,
    StaticBackend,
)
from .rewards import (
    RewardError,
    combine_rewards,
    group_traces,
    load_traces,
    token_advantages,
    user_reward,
    write_advantages,
    write_rewards_json,
)
from .simulator import PlaybookBackend, LlmUser, load_oracle_rules, load_playbooks
from .storage import SessionStore, StorageError, atomic_write_text
from .tree import TreeError, serialize_tree

__all__ = ["main"]

_USAGE_EXIT = 2
_RUNTIME_EXIT = 1


class CliError(Exception):
    def __init__(self, code: str, message: str, detail=None):
        super().__init__(message)
        self.code = code
        self.detail = detail


class _JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"code": "usage", "message": message, "detail": None}),
              file=sys.stderr)
        raise SystemExit(_USAGE_EXIT)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _load_config(args) -> AppConfig:
    overrides: dict = {}
    if getattr(args, "store", None):
        overrides["storage_root"] = args.store
    for key in ("host", "port"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "frontend", None):
        overrides["frontend_dist"] = args.frontend
    return load_config(getattr(args, "config", None), overrides=overrides)


def _scripted_gateway(args) -> Gateway | None:
    """Deterministic backends when --playbooks is given; None otherwise."""
    if not getattr(args, "playbooks", None):
        return None
    if not getattr(args, "init_tree", None):
        raise CliError("usage", "--playbooks requires --init-tree")
    updater_text = "NO_CHANGES_NEEDED"
    if getattr(args, "updater_script", None):
        updater_text = Path(args.updater_script).read_text(encoding="utf-8")
    backends = {
        "interaction_policy": PlaybookBackend(
            load_playbooks(args.playbooks),
            Path(args.init_tree).read_text(encoding="utf-8")),
        "tree_updater": StaticBackend(updater_text),
        "doc_generator": EchoBackend(),
    }
    return Gateway(backends, clock=lambda: 0.0)


def _gateway(args, config: AppConfig) -> Gateway:
    scripted = _scripted_gateway(args)
    if scripted is not None:
        return scripted
    return build_gateway(config)


def _engine(args, config: AppConfig, *, gateway: Gateway | None = None) -> Engine:
    gw = gateway if gateway is not None else _gateway(args, config)
    kwargs = {}
    if getattr(args, "turn_cap", None):
        kwargs["turn_cap"] = args.turn_cap
    # Scripted runs zero the clock so artifacts are byte-reproducible.
    if getattr(args, "playbooks", None):
        kwargs["clock"] = lambda: 0.0
    return Engine(gw, store=SessionStore(config.storage_root), **kwargs)


def _load_session(store: SessionStore, session_id: str) -> Session:
    if not store.exists(session_id):
        raise CliError("session_not_found", f"no session {session_id!r} under store")
    return session_from_dict(
        store.load_state(session_id),
        tree_revisions=store.load_tree_revisions(session_id))


def _advance(engine: Engine, session: Session) -> dict:
    """One assistant step, folding node completion like the HTTP service."""
    ns = session.current_node_session
    if session.status == "running" and ns is not None and ns.end_detected:
        node = session.tree.find(ns.node_path)
        if node is not None and not node.is_processed:
            engine.complete_node(session, ns.node_path)
            return {"kind": "node_complete",
                    "node_complete": list(ns.node_path),
                    "summary": ns.preference_summary}
    signal = engine.next_question(session)
    if isinstance(signal, Question):
        return {"kind": "question", "node_path": list(signal.node_path),
                "question": signal.text}
    if isinstance(signal, NodeComplete):
        engine.complete_node(session, signal.node_path)
        return {"kind": "node_complete", "node_complete": list(signal.node_path),
                "summary": signal.summary}
    assert isinstance(signal, AllComplete)
    return {"kind": "all_complete", "all_complete": True}


def _read_query(args) -> str:
    if getattr(args, "query", None):
        return args.query
    if getattr(args, "intent", None):
        text = Path(args.intent).read_text(encoding="utf-8").strip()
        if not text:
            raise CliError("empty_query", f"intent file {args.intent} is empty")
        return text
    raise CliError("usage", "one of --query or --intent is required")


# -- subcommands -----------------------------------------------------------------


def cmd_init(args) -> None:
    config = _load_config(args)
    engine = _engine(args, config)
    session = engine.initialize_session(_read_query(args), session_id=args.session_id)
    _emit({"session_id": session.id, "tree": json.loads(serialize_tree(session.tree))})


def cmd_step(args) -> None:
    config = _load_config(args)
    engine = _engine(args, config)
    session = _load_session(engine.store, args.session_id)
    _emit(_advance(engine, session))


def cmd_answer(args) -> None:
    config = _load_config(args)
    engine = Engine(Gateway({}), store=SessionStore(config.storage_root))
    session = _load_session(engine.store, args.session_id)
    node_path = tuple(part.strip() for part in args.node_path.split(">"))
    turn = engine.submit_answer(session, node_path, args.text)
    _emit({"parsed_feedback": {
        "kind": turn.parsed.kind,
        "payload": list(turn.parsed.payload),
        "confidence": turn.parsed.confidence,
    }})


def cmd_run(args) -> None:
    config = _load_config(args)
    gateway = _gateway(args, config)
    engine = _engine(args, config, gateway=gateway)
    query = _read_query(args)

    if args.oracle:
        user = load_oracle_rules(args.oracle)
    elif args.simulator == "llm":
        user = LlmUser(gateway, query)
    else:
        raise CliError("usage", "provide --oracle RULES or --simulator llm")

    session = engine.run(
        query, user,
        session_id=args.session_id,
        checkpoint_cadence=args.cadence,
    )
    report = {
        "session_id": session.id,
        "status": session.status,
        "metrics": session.metrics(),
        "checkpoints": [k for k, _ in session.checkpoint_prds],
        "update_log": list(session.update_log),
        "prd_sha256": hashlib.sha256(session.prd.encode("utf-8")).hexdigest(),
    }
    report_path = engine.store.sessions_dir / session.id / "run_report.json"
    atomic_write_text(report_path, json.dumps(report, indent=2) + "\n")
    if args.prd_out:
        atomic_write_text(Path(args.prd_out), session.prd)
    _emit(report)


def cmd_eval(args) -> None:
    prd = Path(args.prd).read_text(encoding="utf-8")
    rubric_tree, warnings = load_rubric_tree(args.rubrics)
    if args.judge == "containment":
        judge = ContainmentJudge()
    else:
        config = _load_config(args)
        judge = LlmJudge(build_gateway(config))
    report = evaluate_prd(prd, rubric_tree, judge, strict_indicator=args.strict)
    report.warnings = warnings + report.warnings
    doc = report.to_dict()
    if args.out:
        atomic_write_text(Path(args.out), json.dumps(doc, indent=2) + "\n")
    if args.markdown:
        atomic_write_text(Path(args.markdown), report.to_markdown())
    _emit(doc)


def cmd_rubrics(args) -> None:
    config = _load_config(args)
    prd = Path(args.prd).read_text(encoding="utf-8")
    judge = LlmJudge(build_gateway(config))
    tree, warnings = judge.generate_rubrics(prd)
    doc = {
        "modules": {
            name: [{"id": r.id, "text": r.text} for r in rubrics]
            for name, rubrics in tree.modules.items()
        },
        "warnings": warnings,
    }
    if args.out:
        atomic_write_text(Path(args.out), json.dumps(doc, indent=2) + "\n")
    _emit(doc)


def _row_index(path: Path) -> tuple[dict, dict]:
    """Per-sequence and per-query sidecar values carried on trace rows."""
    progress: dict[tuple[str, int], int] = {}
    outcome: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            key = (str(row["query_id"]), int(row["seq_index"]))
            progress[key] = int(row.get("progress_reward", 0))
            if "outcome_reward" in row:
                value = float(row["outcome_reward"])
                known = outcome.setdefault(key[0], value)
                if known != value:
                    raise CliError(
                        "inconsistent_traces",
                        f"outcome_reward disagrees within query {key[0]!r}")
    return progress, outcome


def cmd_reward(args) -> None:
    traces_path = Path(args.traces)
    traces = load_traces(traces_path)
    if not traces:
        raise CliError("empty_traces", f"no trace rows in {traces_path}")
    progress, outcome = _row_index(traces_path)
    groups = group_traces(traces)

    out = Path(args.out) if args.out else Path("rewards.json")
    written = []
    all_breakdowns = []
    all_sequences = []
    summary = []
    for group in groups:
        urs = [user_reward(seq) for seq in group.sequences]
        prs = [progress[(group.query_id, seq.seq_index)] for seq in group.sequences]
        odds = outcome.get(group.query_id, 0.0)
        breakdowns, aggregate = combine_rewards(group, urs, prs, odds)
        path = out if len(groups) == 1 else out.with_name(
            f"{out.stem}.{group.query_id}{out.suffix or '.json'}")
        write_rewards_json(path, group.query_id, breakdowns)
        written.append(str(path))
        all_breakdowns.extend(breakdowns)
        all_sequences.extend(group.sequences)
        summary.append({"query_id": group.query_id, "aggregate": aggregate,
                        "sequences": len(group.sequences)})

    result = {"rewards_files": written, "groups": summary}
    if args.advantages:
        tensor = token_advantages(
            all_sequences, [b.r_tilde for b in all_breakdowns])
        bin_path = Path(args.advantages)
        write_advantages(tensor, bin_path)
        result["advantages_file"] = str(bin_path)
        result["shape"] = list(tensor.shape)
    _emit(result)


def cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    config = _load_config(args)
    engine = _engine(args, config)
    app = create_app(engine, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")


class _QueueUser:
    """Replays recorded user answers in order."""

    def __init__(self, answers: list[str]):
        self.answers = list(answers)

    def reply(self, question, node, history) -> str:
        if not self.answers:
            raise CliError("replay_exhausted", "recorded answers ran out")
        return self.answers.pop(0)


def cmd_replay(args) -> None:
    src = SessionStore(args.store)
    if not src.exists(args.session_id):
        raise CliError("session_not_found", f"no session {args.session_id!r} under store")
    state = src.load_state(args.session_id)
    rows = src.read_transcript(args.session_id)
    if not rows:
        raise CliError("empty_transcript", "session has no recorded exchanges")

    queues: dict[str, list[str]] = {}
    answers: list[str] = []
    for row in rows:
        if row.get("role") == "user":
            answers.append(row.get("response", ""))
        else:
            queues.setdefault(row["model_role"], []).append(row["response"])
    backend = SequenceBackend(queues)
    gateway = Gateway({role: backend for role in queues}, clock=lambda: 0.0)

    checkpoints = [int(k) for k, _ in state.get("checkpoint_prds", [])]
    cadence = checkpoints[0] if checkpoints else 0
    session_id = state["id"]
    engine = Engine(
        gateway,
        store=SessionStore(args.out),
        clock=lambda: 0.0,
        id_factory=lambda _q: session_id,
    )
    session = engine.run(
        state["origin_query"], _QueueUser(answers), checkpoint_cadence=cadence)
    _emit({
        "session_id": session.id,
        "out": str(args.out),
        "status": session.status,
        "prd_sha256": hashlib.sha256(session.prd.encode("utf-8")).hexdigest(),
    })


# -- argument wiring --------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--store", help="session storage root (overrides config)")


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--playbooks", help="scripted dialogue playbook JSON")
    parser.add_argument("--init-tree", help="scripted initial tree JSON text file")
    parser.add_argument("--updater-script",
                        help="file with the scripted tree updater reply "
                             "(default keeps the tree unchanged)")
    parser.add_argument("--turn-cap", type=int, help="per-node question cap")


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonArgumentParser(prog="oversight")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a session and print its tree")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--query")
    p.add_argument("--intent", help="file whose text is the product intent")
    p.add_argument("--session-id")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("step", help="advance one assistant step")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--session-id", required=True)
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("answer", help="record the user's answer to the pending question")
    _add_common(p)
    p.add_argument("--session-id", required=True)
    p.add_argument("--node-path", required=True,
                   help="node path joined with '>', e.g. 'Product Overview > Vision'")
    p.add_argument("--text", required=True)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("run", help="drive a full session against a simulator")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--query")
    p.add_argument("--intent", help="file whose text is the product intent")
    p.add_argument("--oracle", help="oracle simulator rules (YAML or JSON)")
    p.add_argument("--simulator", choices=["oracle", "llm"], default="oracle")
    p.add_argument("--cadence", type=int, default=0,
                   help="intermediate document every N completed nodes")
    p.add_argument("--session-id")
    p.add_argument("--prd-out", help="also write the final document here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a document against a rubric tree")
    _add_common(p)
    p.add_argument("--prd", required=True)
    p.add_argument("--rubrics", required=True)
    p.add_argument("--judge", choices=["containment", "llm"], default="containment")
    p.add_argument("--strict", action="store_true",
                   help="credit only full-credit rubric scores")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--markdown", help="write the markdown report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rubrics", help="derive a rubric tree from a reference document")
    _add_common(p)
    p.add_argument("--prd", required=True)
    p.add_argument("--out", help="write the rubric tree JSON here")
    p.set_defaults(func=cmd_rubrics)

    p = sub.add_parser("reward", help="compute rewards and advantages from traces")
    p.add_argument("--traces", required=True, help="trace JSONL file")
    p.add_argument("--out", help="rewards JSON path (default rewards.json)")
    p.add_argument("--advantages", help="also write whitened advantages here (.bin)")
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("serve", help="run the HTTP service")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--frontend", help="static UI directory to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="re-execute a recorded session deterministically")
    p.add_argument("--store", required=True, help="storage root holding the session")
    p.add_argument("--session-id", required=True)
    p.add_argument("--out", required=True, help="storage root for replayed artifacts")
    p.set_defaults(func=cmd_replay)

    return parser


_EXPECTED_ERRORS = (
    CliError, ConfigError, EngineError, GatewayError, EvaluatorError,
    RewardError, StorageError, TreeError, ValueError, KeyError, OSError,
    json.JSONDecodeError,
)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as err:
        print(json.dumps({"code": err.code, "message": str(err),
                          "detail": err.detail}), file=sys.stderr)
        return _RUNTIME_EXIT
    except _EXPECTED_ERRORS as err:
        print(json.dumps({"code": type(err).__name__, "message": str(err),
                          "detail": None}), file=sys.stderr)
        return _RUNTIME_EXIT
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
