"""Session persistence: atomic write-then-load equality, corruption refusal."""

import pytest

from refinpaint.sessions import (
    CorruptState,
    SessionState,
    list_sessions,
    load_session,
    persist_session,
    save_source_midi,
    save_trace,
    session_dir,
)


def make_state(i=0):
    return SessionState(
        session_id=f"s{i:04d}",
        full_ids=[4, 5, 37, 125],
        n_bars=1,
        frag_start=0,
        frag_end=4,
        window_start=0,
        window_len=4,
        pending_content=[4, 5, 37, 125],
        pending_regen=[0, 1, 2, 3],
        records=[{"index": 0, "gfs": 0.5, "tokens": [4, 5, 37, 125]}],
        accepted_index=0,
        idempotency={"iterate:k1": {"ok": True}},
    )


def test_store_load_round_trip(tmp_path):
    state = make_state()
    persist_session(tmp_path, state)
    loaded = load_session(tmp_path, state.session_id)
    assert loaded == state


def test_updated_timestamp_moves(tmp_path):
    state = make_state()
    persist_session(tmp_path, state)
    first = state.updated
    persist_session(tmp_path, state)
    assert state.updated >= first


def test_unknown_session_raises_keyerror(tmp_path):
    with pytest.raises(KeyError):
        load_session(tmp_path, "nope")


def test_truncated_state_is_corrupt_and_preserved(tmp_path):
    state = make_state()
    persist_session(tmp_path, state)
    path = session_dir(tmp_path, state.session_id) / "state.json"
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CorruptState):
        load_session(tmp_path, state.session_id)
    assert path.read_bytes() == blob[: len(blob) // 2]  # left for inspection


def test_fifty_sessions_enumerated(tmp_path):
    for i in range(50):
        persist_session(tmp_path, make_state(i))
    assert list_sessions(tmp_path) == [f"s{i:04d}" for i in range(50)]


def test_source_and_traces_land_in_session_dir(tmp_path):
    state = make_state()
    persist_session(tmp_path, state)
    save_source_midi(tmp_path, state.session_id, b"MThd")
    save_trace(tmp_path, state.session_id, 0, {"i": 0})
    d = session_dir(tmp_path, state.session_id)
    assert (d / "source.mid").read_bytes() == b"MThd"
    assert (d / "trace_000.json").exists()


def test_no_temp_droppings_after_write(tmp_path):
    persist_session(tmp_path, make_state())
    leftovers = [p for p in session_dir(tmp_path, "s0000").iterdir() if p.name.startswith(".tmp_")]
    assert leftovers == []
