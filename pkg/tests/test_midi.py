"""SMF parser/writer: hand-encoded fixtures, round trips, fuzz totality."""

import struct

import numpy as np
import pytest

from refinpaint.midi import (
    MalformedHeader,
    MidiError,
    NoteEvent,
    ParseStats,
    Score,
    TruncatedTrack,
    UnsupportedTimeDivision,
    parse_smf,
    write_smf,
)


def smf(ppq=480, fmt=0, tracks=()):
    """Hand-assemble an SMF from raw track payloads."""
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), ppq)
    for payload in tracks:
        out += b"MTrk" + struct.pack(">I", len(payload)) + payload
    return out


EOT = b"\x00\xff\x2f\x00"


def test_single_note_hand_encoded():
    # delta 0, note-on ch0 p60 v64; delta 480 (0x83 0x60), note-off.
    track = b"\x00\x90\x3c\x40" + b"\x83\x60\x80\x3c\x00" + EOT
    score = parse_smf(smf(tracks=[track]))
    assert score.ppq == 480
    assert score.notes == [NoteEvent(60, 0, 480)]


def test_empty_track_is_empty_score():
    score = parse_smf(smf(tracks=[EOT]))
    assert score.notes == []


def test_note_on_velocity_zero_is_note_off():
    track = b"\x00\x90\x40\x64" + b"\x81\x70\x90\x40\x00" + EOT  # delta 240
    score = parse_smf(smf(tracks=[track]))
    assert score.notes == [NoteEvent(64, 0, 240)]


def test_running_status_accepted():
    # Two notes via running status after the first note-on.
    track = b"\x00\x90\x3c\x40" + b"\x00\x3e\x40" + b"\x60\x3c\x00" + b"\x00\x3e\x00" + EOT
    score = parse_smf(smf(tracks=[track]))
    assert score.notes == [NoteEvent(60, 0, 96), NoteEvent(62, 0, 96)]


def test_unterminated_note_closed_at_end_of_track():
    track = b"\x00\x90\x3c\x40" + b"\x81\x40\xff\x2f\x00"  # EOT at tick 192
    stats = ParseStats()
    score = parse_smf(smf(tracks=[track]), stats)
    assert score.notes == [NoteEvent(60, 0, 192)]
    assert stats.unterminated_notes == 1


def test_dangling_note_off_counted_not_fatal():
    track = b"\x00\x80\x3c\x40" + EOT
    stats = ParseStats()
    score = parse_smf(smf(tracks=[track]), stats)
    assert score.notes == []
    assert stats.dangling_note_offs == 1


def test_format1_tracks_merged():
    t1 = b"\x00\x90\x3c\x40" + b"\x60\x80\x3c\x00" + EOT
    t2 = b"\x00\x91\x48\x40" + b"\x60\x81\x48\x00" + EOT  # channel 1
    score = parse_smf(smf(fmt=1, tracks=[t1, t2]))
    assert sorted(n.pitch for n in score.notes) == [60, 72]


def test_percussion_channel_dropped():
    track = b"\x00\x99\x24\x40" + b"\x60\x89\x24\x00" + EOT  # channel 10
    assert parse_smf(smf(tracks=[track])).notes == []


def test_meta_and_sysex_skipped():
    track = (
        b"\x00\xff\x51\x03\x07\xa1\x20"  # tempo
        + b"\x00\xf0\x03\x01\x02\xf7"  # sysex
        + b"\x00\x90\x3c\x40\x60\x80\x3c\x00"
        + EOT
    )
    score = parse_smf(smf(tracks=[track]))
    assert score.notes == [NoteEvent(60, 0, 96)]


def test_stacked_unisons_preserved():
    track = (
        b"\x00\x90\x3c\x40" + b"\x00\x90\x3c\x40"  # two simultaneous ons
        + b"\x60\x80\x3c\x00" + b"\x60\x80\x3c\x00"  # offs at 96 and 192
        + EOT
    )
    score = parse_smf(smf(tracks=[track]))
    assert score.notes == [NoteEvent(60, 0, 96), NoteEvent(60, 0, 192)]


def test_missing_header_rejected():
    with pytest.raises(MalformedHeader):
        parse_smf(b"RIFF" + b"\x00" * 20)
    with pytest.raises(MalformedHeader):
        parse_smf(b"MThd\x00\x00\x00\x06\x00\x00")  # short


def test_smpte_division_rejected():
    data = b"MThd" + struct.pack(">IHHH", 6, 0, 1, 0xE250)
    with pytest.raises(UnsupportedTimeDivision):
        parse_smf(data)


def test_truncated_track_rejected():
    whole = smf(tracks=[b"\x00\x90\x3c\x40" + b"\x83\x60\x80\x3c\x00" + EOT])
    with pytest.raises(TruncatedTrack):
        parse_smf(whole[:-3])
    # ends inside an event
    data = b"MThd" + struct.pack(">IHHH", 6, 0, 1, 480) + b"MTrk" + struct.pack(">I", 2) + b"\x00\x90"
    with pytest.raises(TruncatedTrack):
        parse_smf(data)


def test_write_empty_score_is_valid_smf():
    raw = write_smf(Score(ppq=480))
    assert raw.startswith(b"MThd")
    assert parse_smf(raw).notes == []


def test_write_one_note_round_trip():
    score = Score(ppq=480, notes=[NoteEvent(60, 0, 480)])
    assert parse_smf(write_smf(score)).notes == score.notes


def random_score(rng, max_notes=64):
    """Random valid Score; equal pitches may stack at one onset but never
    partially overlap (partial equal-pitch overlap is ambiguous in SMF)."""
    ppq = int(rng.choice([24, 96, 480, 960]))
    n = int(rng.integers(0, max_notes + 1))
    notes = []
    busy = {}
    for _ in range(n):
        pitch = int(rng.integers(0, 128))
        onset = int(rng.integers(0, 4096))
        duration = int(rng.integers(1, 2048))
        spans = busy.setdefault(pitch, [])
        if any(onset < e and s < onset + duration and onset != s for s, e in spans):
            continue
        spans.append((onset, onset + duration))
        notes.append(NoteEvent(pitch, onset, duration))
    return Score(ppq=ppq, notes=notes)


def test_round_trip_note_multisets_100_random_scores():
    rng = np.random.default_rng(20240501)
    for _ in range(100):
        score = random_score(rng)
        back = parse_smf(write_smf(score))
        assert back.ppq == score.ppq
        assert sorted(back.notes) == sorted(score.notes)


def test_fuzz_10000_random_byte_strings_never_crash():
    rng = np.random.default_rng(7)
    for i in range(10_000):
        n = int(rng.integers(0, 200))
        blob = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
        if i % 3 == 0:  # bias some inputs toward plausible headers
            blob = b"MThd" + blob
        try:
            parse_smf(blob)
        except MidiError:
            pass  # typed errors are the contract; anything else would fail


def test_fuzz_mutated_real_files_never_crash():
    rng = np.random.default_rng(8)
    base = bytearray(write_smf(random_score(rng, max_notes=16)))
    for _ in range(2_000):
        mutated = bytearray(base)
        for _ in range(int(rng.integers(1, 6))):
            mutated[int(rng.integers(0, len(mutated)))] = int(rng.integers(0, 256))
        try:
            parse_smf(bytes(mutated))
        except MidiError:
            pass


# Independent minimal reader for the writer's constrained output: format 0,
# no running status, 0x90/0x80 only.  Kept separate from the library parser
# on purpose, as a second route for the round-trip check.
def reference_read(raw):
    assert raw[:4] == b"MThd"
    ppq = struct.unpack(">H", raw[12:14])[0]
    assert raw[14:18] == b"MTrk"
    pos, tick = 22, 0
    open_notes, notes = {}, []
    while pos < len(raw):
        delta, shift = 0, 0
        while True:
            byte = raw[pos]
            pos += 1
            delta = (delta << 7) | (byte & 0x7F)
            if not byte & 0x80:
                break
        tick += delta
        status = raw[pos]
        if status == 0xFF:
            break  # writer only emits the final end-of-track meta
        pitch, vel = raw[pos + 1], raw[pos + 2]
        pos += 3
        if status == 0x90 and vel:
            open_notes.setdefault(pitch, []).append(tick)
        else:
            onset = open_notes[pitch].pop(0)
            notes.append((pitch, onset, tick - onset))
    return ppq, sorted(notes)


def test_writer_against_independent_reference_reader_50_files():
    rng = np.random.default_rng(99)
    for _ in range(50):
        score = random_score(rng)
        raw = write_smf(score)
        ppq, ref_notes = reference_read(raw)
        assert ppq == score.ppq
        assert ref_notes == sorted((n.pitch, n.onset, n.duration) for n in score.notes)
        lib = parse_smf(raw)
        assert sorted((n.pitch, n.onset, n.duration) for n in lib.notes) == ref_notes
