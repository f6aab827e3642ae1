"""REST service exposing elicitation sessions to UIs and batch drivers.

Contract highlights:
- strict question/answer alternation; out-of-order calls get 409 and leave
  state untouched
- node completion is folded into GET next, so clients only ever alternate
  next and answer until all_complete
- sessions resume lazily from disk snapshots after a restart
- every error body is {code, message, detail}
"""

from __future__ import annotations

import json
import threading
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .config import AppConfig
from .engine import (
    AllComplete,
    Engine,
    EngineError,
    NodeComplete,
    NodeMismatch,
    Question,
    Session,
    SessionNotAwaiting,
    SessionNotComplete,
    deterministic_session_id,
    session_from_dict,
)
from .gateway import GatewayError
from .tree import serialize_tree

__all__ = ["APIError", "create_app"]

TERMINAL_STATUSES = ("done", "failed")


class APIError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    def response(self) -> JSONResponse:
        return JSONResponse(
            status_code=self.status,
            content={"code": self.code, "message": self.message, "detail": self.detail},
        )


class SessionRegistry:
    """In-memory session table with per-session transition locks.

    Unknown ids are revived from the store's snapshots so a restarted
    service picks up where the previous process stopped.
    """

    def __init__(self, engine: Engine):
        self._engine = engine
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._table_lock = threading.Lock()

    def add(self, session: Session) -> None:
        with self._table_lock:
            self._sessions[session.id] = session
            self._locks.setdefault(session.id, threading.Lock())

    def contains(self, session_id: str) -> bool:
        with self._table_lock:
            if session_id in self._sessions:
                return True
        store = self._engine.store
        return store is not None and store.exists(session_id)

    def lock(self, session_id: str) -> threading.Lock:
        with self._table_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def get(self, session_id: str) -> Session:
        with self._table_lock:
            found = self._sessions.get(session_id)
        if found is not None:
            return found
        store = self._engine.store
        if store is None or not store.exists(session_id):
            raise APIError(404, "session_not_found", f"no session {session_id!r}")
        state = store.load_state(session_id)
        session = session_from_dict(
            state, tree_revisions=store.load_tree_revisions(session_id))
        self.add(session)
        return session

    def active_count(self) -> int:
        with self._table_lock:
            return sum(
                1 for s in self._sessions.values() if s.status not in TERMINAL_STATUSES)


def _feedback_json(parsed) -> dict:
    return {
        "kind": parsed.kind,
        "payload": list(parsed.payload),
        "confidence": parsed.confidence,
    }


def _tree_json(session: Session) -> dict:
    return json.loads(serialize_tree(session.tree))


async def _read_json_body(request: Request, cap: int) -> dict:
    body = await request.body()
    if len(body) > cap:
        raise APIError(400, "body_too_large",
                       f"request body exceeds {cap} bytes", detail={"cap": cap})
    if not body:
        raise APIError(400, "empty_body", "request body is required")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as err:
        raise APIError(400, "bad_json", "request body is not valid JSON",
                       detail=str(err)) from None
    if not isinstance(doc, dict):
        raise APIError(400, "bad_json", "request body must be a JSON object")
    return doc


def create_app(engine: Engine, config: AppConfig) -> FastAPI:
    if engine.store is None:
        raise ValueError("service requires an engine with a session store")

    app = FastAPI(title="oversight", docs_url=None, redoc_url=None)
    registry = SessionRegistry(engine)
    app.state.registry = registry
    app.state.config = config

    @app.exception_handler(APIError)
    async def _api_error(_request, err: APIError):
        return err.response()

    if config.bearer_token:
        @app.middleware("http")
        async def _auth(request: Request, call_next):
            if request.url.path.startswith("/v1"):
                header = request.headers.get("authorization", "")
                if header != f"Bearer {config.bearer_token}":
                    return APIError(401, "unauthorized",
                                    "missing or wrong bearer token").response()
            return await call_next(request)

    def _locked(session_id: str, work: Callable):
        # Engine transitions block on the upstream model; serialize them per
        # session in worker threads so the event loop stays free.
        with registry.lock(session_id):
            return work()

    @app.post("/v1/sessions", status_code=201)
    async def create_session(request: Request):
        doc = await _read_json_body(request, config.limits.body_cap)
        query = doc.get("query")
        if not isinstance(query, str) or not query.strip():
            raise APIError(400, "empty_query", "field 'query' must be a nonempty string")
        client_token = doc.get("client_token")
        if client_token is not None and not isinstance(client_token, str):
            raise APIError(400, "bad_request", "'client_token' must be a string")

        session_id = None
        if client_token:
            session_id = deterministic_session_id(f"client-token:{client_token}")
            if registry.contains(session_id):
                session = await run_in_threadpool(registry.get, session_id)
                return JSONResponse(status_code=200, content={
                    "session_id": session.id, "tree": _tree_json(session)})

        if registry.active_count() >= config.limits.max_sessions:
            raise APIError(503, "capacity",
                           "session limit reached, retry after one completes",
                           detail={"max_sessions": config.limits.max_sessions})

        def work():
            return engine.initialize_session(query, session_id=session_id)

        try:
            session = await run_in_threadpool(work)
        except GatewayError as err:
            raise APIError(502, "upstream_error", "model backend failed",
                           detail=str(err)) from None
        except EngineError as err:
            raise APIError(502, "tree_init_failed", str(err)) from None
        registry.add(session)
        return {"session_id": session.id, "tree": _tree_json(session)}

    @app.get("/v1/sessions/{session_id}/next")
    async def next_step(session_id: str):
        session = await run_in_threadpool(registry.get, session_id)

        def work():
            if session.status == "awaiting_user":
                raise APIError(409, "awaiting_answer",
                               "a question is pending; POST the answer first",
                               detail={"node_path": list(session.current_node_session.node_path)})
            if session.status == "done":
                return {"kind": "all_complete", "all_complete": True}
            if session.status == "failed":
                raise APIError(409, "session_failed", "session is in a failed state")
            ns = session.current_node_session
            if ns is not None and ns.end_detected:
                node = session.tree.find(ns.node_path)
                if node is not None and not node.is_processed:
                    # A previous fold died between snapshot and tree update
                    # (crash or upstream failure); finish it now.
                    engine.complete_node(session, ns.node_path)
                    return {"kind": "node_complete",
                            "node_complete": list(ns.node_path),
                            "summary": ns.preference_summary}
            signal = engine.next_question(session)
            if isinstance(signal, Question):
                return {"kind": "question",
                        "node_path": list(signal.node_path),
                        "question": signal.text}
            if isinstance(signal, NodeComplete):
                engine.complete_node(session, signal.node_path)
                return {"kind": "node_complete",
                        "node_complete": list(signal.node_path),
                        "summary": signal.summary}
            assert isinstance(signal, AllComplete)
            return {"kind": "all_complete", "all_complete": True}

        try:
            return await run_in_threadpool(_locked, session_id, work)
        except GatewayError as err:
            raise APIError(502, "upstream_error", "model backend failed",
                           detail=str(err)) from None

    @app.post("/v1/sessions/{session_id}/answer")
    async def answer(session_id: str, request: Request):
        doc = await _read_json_body(request, config.limits.body_cap)
        node_path = doc.get("node_path")
        answer_raw = doc.get("answer")
        if not isinstance(answer_raw, str) or not answer_raw.strip():
            raise APIError(400, "bad_request", "field 'answer' must be a nonempty string")
        if (not isinstance(node_path, list)
                or not all(isinstance(part, str) for part in node_path)):
            raise APIError(400, "bad_request",
                           "field 'node_path' must be a list of strings")
        session = await run_in_threadpool(registry.get, session_id)

        def work():
            try:
                turn = engine.submit_answer(session, tuple(node_path), answer_raw)
            except SessionNotAwaiting as err:
                raise APIError(409, "not_awaiting", str(err)) from None
            except NodeMismatch as err:
                raise APIError(422, "node_mismatch", str(err),
                               detail={"expected": list(session.current_node_session.node_path),
                                       "got": node_path}) from None
            return {"parsed_feedback": _feedback_json(turn.parsed)}

        return await run_in_threadpool(_locked, session_id, work)

    @app.get("/v1/sessions/{session_id}/tree")
    async def tree_view(session_id: str):
        session = await run_in_threadpool(registry.get, session_id)
        revisions = sorted(tree.version for tree in session.tree_history)
        return {"version": session.tree.version,
                "tree": _tree_json(session),
                "revisions": revisions}

    @app.post("/v1/sessions/{session_id}/prd")
    async def generate_prd(session_id: str, request: Request):
        doc = await _read_json_body(request, config.limits.body_cap)
        intermediate = doc.get("intermediate", False)
        if not isinstance(intermediate, bool):
            raise APIError(400, "bad_request", "'intermediate' must be a boolean")
        session = await run_in_threadpool(registry.get, session_id)

        def work():
            # A finished session keeps serving its stored document instead of
            # regenerating, so replayed requests are idempotent.
            if not intermediate and session.prd is not None:
                return {"prd_text": session.prd}
            try:
                text = engine.generate_prd(session, intermediate=intermediate)
            except SessionNotComplete as err:
                raise APIError(409, "incomplete", str(err)) from None
            return {"prd_text": text}

        try:
            return await run_in_threadpool(_locked, session_id, work)
        except GatewayError as err:
            raise APIError(502, "upstream_error", "model backend failed",
                           detail=str(err)) from None

    @app.get("/v1/sessions/{session_id}")
    async def session_view(session_id: str):
        session = await run_in_threadpool(registry.get, session_id)
        current = None
        if session.status == "awaiting_user":
            ns = session.current_node_session
            current = {"node_path": list(ns.node_path), "question": ns.pending_question}
        return {
            "session_id": session.id,
            "status": session.status,
            "origin_query": session.origin_query,
            "tree_version": session.tree.version,
            "current": current,
            "preference_log": [
                {"node_path": list(entry.node_path), "summary": entry.summary}
                for entry in session.context],
            "total_turns": session.total_turns,
            "turns_per_node": session.turns_per_node,
            "prd": session.prd,
            "checkpoints": [k for k, _ in session.checkpoint_prds],
        }

    if config.frontend_dist is not None and config.frontend_dist.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=config.frontend_dist, html=True),
                  name="ui")

    return app
