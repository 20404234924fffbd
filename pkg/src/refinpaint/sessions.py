"""File-backed proofreading sessions.

One directory per session holding state.json, the uploaded source.mid and a
trace file per iteration.  Writes are atomic (temp file + rename) and a
stored session reloads to an equal value.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path


class CorruptState(ValueError):
    """state.json is unreadable; the file is left in place for inspection."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class SessionState:
    session_id: str
    created: str = field(default_factory=_now)
    updated: str = field(default_factory=_now)
    full_ids: list[int] = field(default_factory=list)
    n_bars: int = 0
    # Fragment / window geometry, token indices into full_ids.
    window_start: int | None = None
    window_len: int | None = None
    frag_start: int | None = None
    frag_end: int | None = None
    bar_from: int | None = None
    bar_to: int | None = None
    # Engine state between iterations (window-relative).
    pending_content: list[int] = field(default_factory=list)
    pending_regen: list[int] = field(default_factory=list)
    iter_index: int = 0
    records: list[dict] = field(default_factory=list)
    accepted_index: int | None = None
    idempotency: dict[str, dict] = field(default_factory=dict)

    @property
    def has_fragment(self) -> bool:
        return self.frag_start is not None


def session_dir(state_dir: Path, session_id: str) -> Path:
    return Path(state_dir) / session_id


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def persist_session(state_dir: Path, state: SessionState) -> None:
    directory = session_dir(state_dir, state.session_id)
    directory.mkdir(parents=True, exist_ok=True)
    state.updated = _now()
    blob = json.dumps(asdict(state), sort_keys=True).encode()
    _atomic_write(directory / "state.json", blob)


def load_session(state_dir: Path, session_id: str) -> SessionState:
    path = session_dir(state_dir, session_id) / "state.json"
    if not path.exists():
        raise KeyError(session_id)
    try:
        payload = json.loads(path.read_text())
        return SessionState(**payload)
    except (json.JSONDecodeError, TypeError, UnicodeDecodeError) as exc:
        raise CorruptState(f"{path}: {exc}") from exc


def list_sessions(state_dir: Path) -> list[str]:
    root = Path(state_dir)
    if not root.exists():
        return []
    return sorted(
        p.name for p in root.iterdir() if (p / "state.json").exists()
    )


def save_source_midi(state_dir: Path, session_id: str, raw: bytes) -> None:
    directory = session_dir(state_dir, session_id)
    directory.mkdir(parents=True, exist_ok=True)
    _atomic_write(directory / "source.mid", raw)


def save_trace(state_dir: Path, session_id: str, index: int, trace: dict) -> None:
    directory = session_dir(state_dir, session_id)
    directory.mkdir(parents=True, exist_ok=True)
    _atomic_write(directory / f"trace_{index:03d}.json", json.dumps(trace).encode())
