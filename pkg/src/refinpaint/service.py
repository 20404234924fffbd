"""HTTP session service for the proofreading client.

Stateless JSON API over file-backed sessions: upload a MIDI file, select a
bar range as the fragment, iterate the refine loop (optionally with edits),
accept an iteration and export the result.  Every mutation persists before
the response goes out, so a restart loses nothing, and mutating endpoints
honor an Idempotency-Key header.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import sessions as store
from .config import ServiceConfig
from .engine import (
    Edit,
    Heatmap,
    PositionOutsideFragment,
    apply_edits,
    create_mask,
    critique,
    gfs,
    sample_fill,
    schedule_masked_count,
)
from .errors import DomainError
from .midi import MidiError, parse_smf, write_smf
from .models import load_checkpoint
from .remi import BAR_ID, MASK_ID, VOCAB, TokenSeq, decode, encode, note_spans, parse_token
from .sessions import CorruptState, SessionState

ERROR_CODES = frozenset(
    {
        "MalformedBody",
        "UnknownSession",
        "NoFragmentSelected",
        "InvalidEdit",
        "InvalidFragment",
        "InvalidIteration",
        "CorruptState",
    }
)


class ApiError(Exception):
    def __init__(self, code: str, message: str, status: int):
        assert code in ERROR_CODES
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


class FragmentBody(BaseModel):
    bar_from: int
    bar_to: int


class EditBody(BaseModel):
    kind: str
    pos: int | None = None
    token: str | None = None
    token_id: int | None = None
    keep_count: int | None = None


class IterateBody(BaseModel):
    edits: list[EditBody] = []
    keep_count: int | None = None
    temperature: float | None = None
    seed: int | None = None  # explicit sampling seed for reproducible runs


class AcceptBody(BaseModel):
    iteration_index: int


def _session_seed(session_id: str) -> int:
    return int.from_bytes(hashlib.sha256(session_id.encode()).digest()[:4], "little")


def bar_span(full_ids: np.ndarray, bar_from: int, bar_to: int) -> tuple[int, int]:
    """Token span [start, end) covered by an inclusive bar range.

    A bar's span runs from its Bar token up to the next Bar token (or the
    end of the piece).
    """
    full_ids = np.asarray(full_ids)
    bar_positions = np.flatnonzero(full_ids == BAR_ID)
    if not 0 <= bar_from <= bar_to < len(bar_positions):
        raise DomainError(
            f"bars {bar_from}..{bar_to} outside 0..{len(bar_positions) - 1}"
        )
    start = int(bar_positions[bar_from])
    end = (
        int(bar_positions[bar_to + 1])
        if bar_to + 1 < len(bar_positions)
        else len(full_ids)
    )
    return start, end


def splice_fragment_score(full_ids, frag_start: int, frag_end: int, frag_tokens):
    """Replace a bar-aligned fragment and decode with anchored timing.

    The prefix, the regenerated fragment and the suffix decode as separate
    segments pinned to their original bar indices, so content outside the
    fragment keeps its timing even when the regenerated fragment does not
    contain exactly the original number of Bar tokens.
    """
    full_ids = list(full_ids)
    bar_from = sum(1 for i in full_ids[:frag_start] if i == BAR_ID)
    suffix_bar = bar_from + sum(1 for i in full_ids[frag_start:frag_end] if i == BAR_ID)
    bar_ticks = 4 * 480
    lo_tick, hi_tick = bar_from * bar_ticks, suffix_bar * bar_ticks
    frag_notes = [
        n
        for n in decode(TokenSeq.from_ids(list(frag_tokens)), strict=False,
                        start_bar=bar_from).notes
        if lo_tick <= n.onset < hi_tick  # regenerated content stays in its bars
    ]
    notes = (
        decode(TokenSeq.from_ids(full_ids[:frag_start]), strict=False).notes
        + frag_notes
        + decode(TokenSeq.from_ids(full_ids[frag_end:]), strict=False, start_bar=suffix_bar).notes
    )
    from .midi import Score

    return Score(ppq=480, notes=notes)


def place_window(full, frag_start: int, frag_end: int, max_len: int) -> tuple[int, int]:
    """Pick a window of at most max_len tokens containing the fragment,
    starting on a Bar token when one fits."""
    full = np.asarray(full)
    total = len(full)
    if total <= max_len:
        return 0, total
    frag_len = frag_end - frag_start
    desired = frag_start - (max_len - frag_len) // 2
    lo = max(0, frag_end - max_len)
    hi = min(frag_start, total - max_len)
    desired = min(max(desired, lo), hi)
    bar_positions = np.flatnonzero(full[: hi + 1] == BAR_ID)
    candidates = bar_positions[(bar_positions >= lo) & (bar_positions <= hi)]
    if candidates.size:
        start = int(candidates[np.argmin(np.abs(candidates - desired))])
    else:
        start = desired
    return start, max_len


class SessionService:
    """All endpoint logic, independent of the web framework."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.state_dir = Path(config.state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.inpainter = load_checkpoint(Path(config.inpainter).read_bytes(), "inpainter")
        self.feedback = load_checkpoint(Path(config.feedback).read_bytes(), "feedback")
        self.evaluator = (
            load_checkpoint(Path(config.evaluator).read_bytes(), "evaluator")
            if config.evaluator and Path(config.evaluator).exists()
            else None
        )
        self._sessions: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global_lock = threading.Lock()

    # -- session plumbing ------------------------------------------------------

    def _lock(self, session_id: str) -> threading.Lock:
        with self._global_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _get(self, session_id: str) -> SessionState:
        if session_id not in self._sessions:
            try:
                self._sessions[session_id] = store.load_session(self.state_dir, session_id)
            except KeyError:
                raise ApiError("UnknownSession", f"no session {session_id}", 404)
            except CorruptState as exc:
                raise ApiError("CorruptState", str(exc), 500)
        return self._sessions[session_id]

    def _persist(self, state: SessionState) -> None:
        store.persist_session(self.state_dir, state)

    def _replay(self, state: SessionState, scope: str, key: str | None) -> dict | None:
        if key is None:
            return None
        return state.idempotency.get(f"{scope}:{key}")

    def _remember(self, state, scope: str, key: str | None, response: dict) -> None:
        if key is not None:
            state.idempotency[f"{scope}:{key}"] = response

    # -- endpoint logic --------------------------------------------------------

    def create(self, raw: bytes, idempotency_key: str | None) -> dict:
        with self._global_lock:
            keys_path = self.state_dir / "_create_keys.json"
            if idempotency_key and keys_path.exists():
                known = json.loads(keys_path.read_text())
                if idempotency_key in known:
                    session_id = known[idempotency_key]
                    return self._create_response(self._get(session_id))
        try:
            score = parse_smf(raw)
        except MidiError as exc:
            raise ApiError("MalformedBody", f"unreadable MIDI: {exc}", 400)
        seq = encode(score)
        state = SessionState(
            session_id=uuid.uuid4().hex,
            full_ids=[int(i) for i in seq.to_ids()],
            n_bars=sum(1 for t in seq if str(t) == "Bar"),
        )
        store.save_source_midi(self.state_dir, state.session_id, raw)
        self._persist(state)
        self._sessions[state.session_id] = state
        if idempotency_key:
            with self._global_lock:
                keys_path = self.state_dir / "_create_keys.json"
                known = json.loads(keys_path.read_text()) if keys_path.exists() else {}
                known[idempotency_key] = state.session_id
                keys_path.write_text(json.dumps(known))
        return self._create_response(state)

    def _create_response(self, state: SessionState) -> dict:
        return {
            "session_id": state.session_id,
            "n_bars": state.n_bars,
            "bars": self._bars(state),
        }

    def _bars(self, state: SessionState) -> list[dict]:
        seq = TokenSeq.from_ids(state.full_ids)
        by_bar: dict[int, list[dict]] = {i: [] for i in range(state.n_bars)}
        for span in note_spans(seq):
            by_bar.setdefault(span.bar, []).append(
                {"pitch": span.pitch, "onset": span.onset, "duration": span.duration}
            )
        return [{"index": i, "notes": by_bar.get(i, [])} for i in sorted(by_bar)]

    def select_fragment(self, session_id: str, body: FragmentBody, key: str | None) -> dict:
        with self._lock(session_id):
            state = self._get(session_id)
            replay = self._replay(state, "fragment", key)
            if replay is not None:
                return replay
            full = np.asarray(state.full_ids, dtype=np.int64)
            try:
                frag_start, frag_end = bar_span(full, body.bar_from, body.bar_to)
            except DomainError as exc:
                raise ApiError("InvalidFragment", str(exc), 422)
            max_len = self.inpainter.config.max_len
            if frag_end - frag_start > max_len - 2:
                raise ApiError(
                    "InvalidFragment",
                    f"fragment of {frag_end - frag_start} tokens exceeds the "
                    f"model window of {max_len}",
                    422,
                )
            window_start, window_len = place_window(full, frag_start, frag_end, max_len)
            state.frag_start, state.frag_end = frag_start, frag_end
            state.bar_from, state.bar_to = body.bar_from, body.bar_to
            state.window_start, state.window_len = window_start, window_len
            state.pending_content = [int(i) for i in full[window_start : window_start + window_len]]
            frag_rel = np.arange(frag_start - window_start, frag_end - window_start)
            state.pending_regen = [int(i) for i in frag_rel]
            state.iter_index = 0
            state.records = []
            state.accepted_index = None
            response = {
                "fragment_token_range": [frag_start, frag_end],
                "n_tokens": frag_end - frag_start,
                "bars": [body.bar_from, body.bar_to],
                "window": {"start": window_start, "len": window_len},
                "notes": self._window_notes(state, state.pending_content, None, None),
            }
            self._remember(state, "fragment", key, response)
            self._persist(state)
            return response

    def _heatmap_of(self, state: SessionState, record: dict | None) -> Heatmap:
        m_u = self._fragment_mask(state)
        if record is None:
            return critique(self.feedback, np.asarray(state.pending_content), m_u)
        probs = np.array(
            [np.nan if v is None else v for v in record["heatmap"]], dtype=np.float64
        )
        return Heatmap(probs=probs, fragment=m_u)

    def _fragment_mask(self, state: SessionState) -> np.ndarray:
        mask = np.zeros(state.window_len, dtype=bool)
        mask[state.frag_start - state.window_start : state.frag_end - state.window_start] = True
        return mask

    def iterate(self, session_id: str, body: IterateBody, key: str | None) -> dict:
        with self._lock(session_id):
            state = self._get(session_id)
            replay = self._replay(state, "iterate", key)
            if replay is not None:
                return replay
            if not state.has_fragment:
                raise ApiError("NoFragmentSelected", "select a fragment first", 409)

            m_u = self._fragment_mask(state)
            content = np.asarray(state.pending_content, dtype=np.int64)
            regen = np.zeros(state.window_len, dtype=bool)
            regen[state.pending_regen] = True

            edits = []
            if body.keep_count is not None:
                edits.append(Edit(kind="set_keep_count", keep_count=body.keep_count))
            edits.extend(self._parse_edits(body.edits))
            if edits:
                last = state.records[-1] if state.records else None
                heatmap = self._heatmap_of(state, last)
                try:
                    regen, content = apply_edits(regen, content, edits, heatmap)
                except (PositionOutsideFragment, DomainError) as exc:
                    raise ApiError("InvalidEdit", str(exc), 422)

            rng_seed = (
                body.seed if body.seed is not None else _session_seed(session_id)
            )
            rng = np.random.default_rng(
                np.random.SeedSequence([rng_seed, state.iter_index])
            )
            temperature = (
                body.temperature
                if body.temperature is not None
                else self.config.engine.temperature
            )
            x_masked = np.where(regen, MASK_ID, content)
            x_hat = sample_fill(
                x_masked, regen, self.inpainter, temperature, self.config.engine.top_p, rng
            )
            heatmap = critique(self.feedback, x_hat, m_u)
            score = gfs(heatmap, m_u)
            total = self.config.engine.iterations
            sched_i = min(state.iter_index, total - 1)
            next_mask = create_mask(
                heatmap, schedule_masked_count(sched_i, total, int(m_u.sum()))
            )

            record = {
                "index": state.iter_index,
                "gfs": round(score, 9),
                "regen_count": int(regen.sum()),
                "tokens": [int(i) for i in x_hat],
                "heatmap": [None if np.isnan(v) else round(float(v), 6) for v in heatmap.probs],
                "next_regenerate": [int(i) for i in np.flatnonzero(next_mask)],
                "edits_applied": [self._edit_dict(e) for e in edits],
            }
            previous = content
            state.records.append(record)
            state.pending_content = [int(i) for i in x_hat]
            state.pending_regen = record["next_regenerate"]
            state.iter_index += 1
            response = self._record_response(state, record, previous)
            self._remember(state, "iterate", key, response)
            self._persist(state)
            store.save_trace(self.state_dir, session_id, record["index"], record)
            return response

    @staticmethod
    def _edit_dict(edit: Edit) -> dict:
        return {
            "kind": edit.kind,
            "pos": edit.pos,
            "token_id": edit.token_id,
            "keep_count": edit.keep_count,
        }

    def _parse_edits(self, bodies: list[EditBody]) -> list[Edit]:
        edits = []
        for b in bodies:
            if b.kind not in {"force_keep", "force_regenerate", "replace_token", "set_keep_count"}:
                raise ApiError("InvalidEdit", f"unknown edit kind {b.kind!r}", 422)
            token_id = b.token_id
            if b.kind == "replace_token" and token_id is None:
                if b.token is None:
                    raise ApiError("InvalidEdit", "replace_token needs token or token_id", 422)
                try:
                    token_id = VOCAB.id_of(parse_token(b.token))
                except (ValueError, KeyError) as exc:
                    raise ApiError("InvalidEdit", f"bad token {b.token!r}: {exc}", 422)
            edits.append(Edit(kind=b.kind, pos=b.pos, token_id=token_id, keep_count=b.keep_count))
        return edits

    def _record_response(self, state: SessionState, record: dict, previous) -> dict:
        window_tokens = record["tokens"]
        notes = self._window_notes(state, window_tokens, record["heatmap"], previous)
        return {
            "session_id": state.session_id,
            "index": record["index"],
            "gfs": record["gfs"],
            "regen_count": record["regen_count"],
            "window": {"start": state.window_start, "len": state.window_len},
            "fragment_token_range": [state.frag_start, state.frag_end],
            "notes": notes,
            "next_regenerate": record["next_regenerate"],
            "heatmap": record["heatmap"],
        }

    def _window_notes(self, state, window_tokens, heatmap, previous) -> list[dict]:
        """Note-level view of a window: coordinates, realism, change flags."""
        seq = TokenSeq.from_ids(window_tokens)
        bar_offset = sum(
            1 for i in state.full_ids[: state.window_start] if i == BAR_ID
        )
        prev_set = set()
        if previous is not None:
            for s in note_spans(TokenSeq.from_ids(previous)):
                prev_set.add((s.bar, s.onset, s.pitch, s.duration))
        notes = []
        for s in note_spans(seq):
            prob = None
            if heatmap is not None:
                p1, p2 = heatmap[s.pitch_index], heatmap[s.duration_index]
                if p1 is not None and p2 is not None:
                    prob = min(p1, p2)  # conservative note-level realism
            notes.append(
                {
                    "pitch": s.pitch,
                    "onset": s.onset,
                    "duration": s.duration,
                    "bar": s.bar + bar_offset,
                    "prob": prob,
                    "token_indices": [s.pitch_index, s.duration_index],
                    "structure_indices": [s.bar_index, s.position_index],
                    "changed": previous is not None
                    and (s.bar, s.onset, s.pitch, s.duration) not in prev_set,
                }
            )
        return notes

    def summary(self, session_id: str) -> dict:
        with self._lock(session_id):
            state = self._get(session_id)
            records = []
            previous = (
                state.full_ids[state.window_start : state.window_start + state.window_len]
                if state.has_fragment
                else None
            )
            for record in state.records:
                records.append(self._record_response(state, record, previous))
                previous = record["tokens"]
            return {
                "session_id": state.session_id,
                "created": state.created,
                "updated": state.updated,
                "n_bars": state.n_bars,
                "bars": self._bars(state),
                "fragment": (
                    {
                        "token_range": [state.frag_start, state.frag_end],
                        "bars": [state.bar_from, state.bar_to],
                        "window": {"start": state.window_start, "len": state.window_len},
                    }
                    if state.has_fragment
                    else None
                ),
                "records": records,
                "accepted_index": state.accepted_index,
            }

    def accept(self, session_id: str, body: AcceptBody, key: str | None) -> dict:
        with self._lock(session_id):
            state = self._get(session_id)
            replay = self._replay(state, "accept", key)
            if replay is not None:
                return replay
            if not 0 <= body.iteration_index < len(state.records):
                raise ApiError(
                    "InvalidIteration",
                    f"iteration {body.iteration_index} outside 0..{len(state.records) - 1}",
                    422,
                )
            state.accepted_index = body.iteration_index
            response = {"ok": True, "accepted_index": state.accepted_index}
            self._remember(state, "accept", key, response)
            self._persist(state)
            return response

    def export(self, session_id: str) -> tuple[bytes, int | None]:
        with self._lock(session_id):
            state = self._get(session_id)
            if not state.records:
                score = decode(TokenSeq.from_ids(state.full_ids), strict=False)
                return write_smf(score), None
            used = (
                state.accepted_index
                if state.accepted_index is not None
                else len(state.records) - 1
            )
            # Context tokens in the window never change, so splicing just the
            # fragment is equivalent and keeps the suffix time-anchored.
            window_tokens = state.records[used]["tokens"]
            lo = state.frag_start - state.window_start
            hi = state.frag_end - state.window_start
            score = splice_fragment_score(
                state.full_ids, state.frag_start, state.frag_end, window_tokens[lo:hi]
            )
            return write_smf(score), used


def create_app(config: ServiceConfig) -> FastAPI:
    service = SessionService(config)
    app = FastAPI(title="refinpaint session service")
    app.state.service = service

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(RequestValidationError)
    async def _bad_body(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"code": "MalformedBody", "message": str(exc.errors()[:1])}
        )

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/sessions")
    async def create_session(
        file: UploadFile, idempotency_key: str | None = Header(default=None)
    ):
        raw = await file.read()
        return service.create(raw, idempotency_key)

    @app.post("/v1/sessions/{session_id}/fragment")
    def select_fragment(
        session_id: str,
        body: FragmentBody,
        idempotency_key: str | None = Header(default=None),
    ):
        return service.select_fragment(session_id, body, idempotency_key)

    @app.post("/v1/sessions/{session_id}/iterate")
    def iterate(
        session_id: str,
        body: IterateBody,
        idempotency_key: str | None = Header(default=None),
    ):
        return service.iterate(session_id, body, idempotency_key)

    @app.get("/v1/sessions/{session_id}")
    def summary(session_id: str):
        return service.summary(session_id)

    @app.post("/v1/sessions/{session_id}/accept")
    def accept(
        session_id: str,
        body: AcceptBody,
        idempotency_key: str | None = Header(default=None),
    ):
        return service.accept(session_id, body, idempotency_key)

    @app.get("/v1/sessions/{session_id}/export")
    def export(session_id: str):
        raw, used = service.export(session_id)
        headers = {"X-Export-Iteration": "" if used is None else str(used)}
        return Response(content=raw, media_type="audio/midi", headers=headers)

    return app


def serve(config: ServiceConfig) -> None:  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    uvicorn.run(create_app(config), host="127.0.0.1", port=config.port, log_level="warning")
