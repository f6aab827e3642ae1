"""Session persistence: atomic JSON snapshots, tree revisions, JSONL transcripts.

Layout under a store root:
    sessions/{id}/state.json        latest session snapshot
    sessions/{id}/transcript.jsonl  append-only exchange log, monotone seq
    sessions/{id}/tree.v{N}.json    one file per tree revision
    sessions/{id}/prd.md            final document, when generated

Snapshots are written temp-then-rename so a crash never leaves a torn file; a
crash mid-append to the transcript leaves a parseable prefix that readers
tolerate.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import asdict, is_dataclass
from pathlib import Path

__all__ = [
    "StorageError",
    "SessionStore",
    "TranscriptWriter",
    "atomic_write_text",
    "atomic_write_bytes",
]

_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


class StorageError(Exception):
    pass


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _jsonable(value):
    if is_dataclass(value) and not isinstance(value, type):
        return asdict(value)
    return value


class TranscriptWriter:
    """Append-only JSONL with monotone sequence numbers. One writer per session."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self._seq = self._recover_seq()

    def _recover_seq(self) -> int:
        if not self.path.exists():
            return 0
        last = -1
        for record in read_jsonl(self.path):
            last = record.get("seq", last)
        return last + 1

    @property
    def next_seq(self) -> int:
        return self._seq

    def append(self, record: dict) -> int:
        with self._lock:
            seq = self._seq
            row = {"seq": seq, **{k: _jsonable(v) for k, v in record.items()}}
            line = json.dumps(row, ensure_ascii=False)
            try:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
            except OSError as exc:
                raise StorageError(f"transcript append failed: {exc}") from exc
            self._seq = seq + 1
            return seq


def read_jsonl(path: Path) -> list[dict]:
    """Read a JSONL file, ignoring a truncated trailing line."""
    records: list[dict] = []
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    for line in raw.split("\n"):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            break  # crash tail; everything before it is intact
    return records


class SessionStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.sessions_dir = self.root / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._writers: dict[str, TranscriptWriter] = {}
        self._lock = threading.Lock()

    def _dir(self, session_id: str, *, create: bool = False) -> Path:
        if not _ID_RE.match(session_id):
            raise StorageError(f"bad session id {session_id!r}")
        d = self.sessions_dir / session_id
        if create:
            d.mkdir(parents=True, exist_ok=True)
        return d

    def list_sessions(self) -> list[str]:
        return sorted(p.name for p in self.sessions_dir.iterdir() if p.is_dir())

    def exists(self, session_id: str) -> bool:
        return (self._dir(session_id) / "state.json").exists()

    # -- snapshots ----------------------------------------------------------

    def save_state(self, session_id: str, state: dict) -> None:
        d = self._dir(session_id, create=True)
        atomic_write_text(d / "state.json", json.dumps(state, ensure_ascii=False, indent=2))

    def load_state(self, session_id: str) -> dict:
        path = self._dir(session_id) / "state.json"
        if not path.exists():
            raise StorageError(f"no such session {session_id!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    # -- tree revisions ------------------------------------------------------

    def save_tree_revision(self, session_id: str, version: int, tree_json: str) -> None:
        d = self._dir(session_id, create=True)
        atomic_write_text(d / f"tree.v{version}.json", tree_json)

    def load_tree_revisions(self, session_id: str) -> dict[int, str]:
        d = self._dir(session_id)
        out: dict[int, str] = {}
        for path in d.glob("tree.v*.json"):
            m = re.match(r"tree\.v(\d+)\.json$", path.name)
            if m:
                out[int(m.group(1))] = path.read_text(encoding="utf-8")
        return out

    # -- documents -----------------------------------------------------------

    def save_prd(self, session_id: str, text: str) -> None:
        atomic_write_text(self._dir(session_id, create=True) / "prd.md", text)

    def load_prd(self, session_id: str) -> str | None:
        path = self._dir(session_id) / "prd.md"
        return path.read_text(encoding="utf-8") if path.exists() else None

    # -- transcript ------------------------------------------------------------

    def transcript_writer(self, session_id: str) -> TranscriptWriter:
        with self._lock:
            writer = self._writers.get(session_id)
            if writer is None:
                d = self._dir(session_id, create=True)
                writer = TranscriptWriter(d / "transcript.jsonl")
                self._writers[session_id] = writer
            return writer

    def read_transcript(self, session_id: str) -> list[dict]:
        path = self._dir(session_id) / "transcript.jsonl"
        if not path.exists():
            return []
        return read_jsonl(path)
