"""Standard MIDI File reading and writing for single-track piano material.

The parser accepts format 0/1 files with metrical (PPQ) timing, merges all
tracks and channels (except percussion, channel 10) into one note list, and
discards everything that is not a note: tempo, time signatures, controllers,
sysex and velocity dynamics are all ignored.  The writer emits a minimal
format-0 file with a fixed velocity.

Overlapping notes of the same pitch are paired first-on/first-off, which
round-trips stacked unisons exactly; partially overlapping equal-pitch notes
are inherently ambiguous in SMF and may swap durations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field


class MidiError(Exception):
    """Base class for MIDI parse errors."""


class MalformedHeader(MidiError):
    """Missing or undersized MThd chunk, or an unusable header field."""


class UnsupportedTimeDivision(MidiError):
    """SMPTE time division; only metrical PPQ timing is supported."""


class TruncatedTrack(MidiError):
    """The byte stream ended inside an event or chunk."""


WRITE_VELOCITY = 80  # fixed audible velocity; input velocities are discarded

_PPQ_MIN = 24
_PPQ_MAX = 960
_PERCUSSION_CHANNEL = 9  # channel 10, 1-based


@dataclass(frozen=True, order=True)
class NoteEvent:
    """One note: MIDI pitch, onset tick and duration in ticks."""

    pitch: int
    onset: int
    duration: int

    def __post_init__(self) -> None:
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.onset < 0:
            raise ValueError(f"onset {self.onset} < 0")
        if self.duration < 1:
            raise ValueError(f"duration {self.duration} < 1")


@dataclass
class Score:
    """A note list on a metrical tick grid."""

    ppq: int
    notes: list[NoteEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.ppq < 1:
            raise ValueError(f"ppq {self.ppq} < 1")
        self.notes = sorted(self.notes, key=lambda n: (n.onset, n.pitch, n.duration))


@dataclass
class ParseStats:
    """Counters for tolerated oddities encountered while parsing."""

    dangling_note_offs: int = 0
    unterminated_notes: int = 0


def _read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    """Read a variable-length quantity, returning (value, new position)."""
    value = 0
    for i in range(4):
        if pos >= len(data):
            raise TruncatedTrack("byte stream ended inside a variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise TruncatedTrack("variable-length quantity longer than 4 bytes")


def _write_vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


# Data byte counts for channel messages by high nibble (0x8n..0xEn).
_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}
# System common messages (inside a file these are unusual but must not crash).
_SYSTEM_DATA_LEN = {0xF1: 1, 0xF2: 2, 0xF3: 1, 0xF4: 0, 0xF5: 0, 0xF6: 0}


def _parse_track(data: bytes, stats: ParseStats) -> list[NoteEvent]:
    """Parse one MTrk payload into closed NoteEvents."""
    notes: list[NoteEvent] = []
    open_notes: dict[tuple[int, int], list[int]] = {}
    pos = 0
    tick = 0
    running_status: int | None = None

    def close_note(channel: int, pitch: int, off_tick: int) -> bool:
        stack = open_notes.get((channel, pitch))
        if not stack:
            return False
        onset = stack.pop(0)  # first-on/first-off pairing
        if channel != _PERCUSSION_CHANNEL:
            notes.append(NoteEvent(pitch, onset, max(1, off_tick - onset)))
        return True

    while pos < len(data):
        delta, pos = _read_vlq(data, pos)
        tick += delta
        if pos >= len(data):
            raise TruncatedTrack("byte stream ended before an event status byte")
        status = data[pos]
        if status >= 0x80:
            pos += 1
        else:
            if running_status is None:
                raise TruncatedTrack("data byte with no running status to reuse")
            status = running_status

        if status == 0xFF:  # meta event
            if pos >= len(data):
                raise TruncatedTrack("byte stream ended inside a meta event")
            meta_type = data[pos]
            pos += 1
            length, pos = _read_vlq(data, pos)
            if pos + length > len(data):
                raise TruncatedTrack("byte stream ended inside a meta event payload")
            pos += length
            running_status = None
            if meta_type == 0x2F:  # end of track
                break
        elif status in (0xF0, 0xF7):  # sysex
            length, pos = _read_vlq(data, pos)
            if pos + length > len(data):
                raise TruncatedTrack("byte stream ended inside a sysex payload")
            pos += length
            running_status = None
        elif status >= 0xF0:
            n_data = _SYSTEM_DATA_LEN.get(status, 0)
            if pos + n_data > len(data):
                raise TruncatedTrack("byte stream ended inside a system message")
            pos += n_data
            running_status = None
        else:
            kind = status >> 4
            channel = status & 0x0F
            n_data = _CHANNEL_DATA_LEN[kind]
            if pos + n_data > len(data):
                raise TruncatedTrack("byte stream ended inside a channel message")
            d1 = data[pos]
            d2 = data[pos + 1] if n_data == 2 else 0
            pos += n_data
            running_status = status
            if d1 > 127 or d2 > 127:
                raise TruncatedTrack("channel message data byte above 127")
            if kind == 0x9 and d2 > 0:  # note on
                open_notes.setdefault((channel, d1), []).append(tick)
            elif kind == 0x8 or (kind == 0x9 and d2 == 0):  # note off
                if not close_note(channel, d1, tick):
                    stats.dangling_note_offs += 1

    # Close anything the track left hanging at its final tick.
    for (channel, pitch), onsets in open_notes.items():
        for onset in onsets:
            stats.unterminated_notes += 1
            if channel != _PERCUSSION_CHANNEL:
                notes.append(NoteEvent(pitch, onset, max(1, tick - onset)))
    return notes


def parse_smf(data: bytes, stats: ParseStats | None = None) -> Score:
    """Parse Standard MIDI File bytes into a Score.

    All tracks and channels are merged; percussion (channel 10) is dropped.
    Velocity-0 note-ons count as note-offs, and notes still open at the end
    of a track are closed there.  `stats`, when given, accumulates counts of
    tolerated oddities (dangling note-offs, unterminated notes).
    """
    if stats is None:
        stats = ParseStats()
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("file does not start with an MThd chunk")
    header_len = struct.unpack(">I", data[4:8])[0]
    if header_len < 6:
        raise MalformedHeader(f"MThd length {header_len} < 6")
    if len(data) < 8 + header_len:
        raise MalformedHeader("byte stream ended inside the MThd chunk")
    _fmt, n_tracks, division = struct.unpack(">HHH", data[8:14])
    if division & 0x8000:
        raise UnsupportedTimeDivision("SMPTE time division is not supported")
    ppq = division & 0x7FFF
    if not _PPQ_MIN <= ppq <= _PPQ_MAX:
        raise MalformedHeader(f"ppq {ppq} outside {_PPQ_MIN}..{_PPQ_MAX}")

    notes: list[NoteEvent] = []
    pos = 8 + header_len
    tracks_seen = 0
    while tracks_seen < n_tracks and pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedTrack("byte stream ended inside a chunk header")
        chunk_type = data[pos : pos + 4]
        chunk_len = struct.unpack(">I", data[pos + 4 : pos + 8])[0]
        pos += 8
        if pos + chunk_len > len(data):
            raise TruncatedTrack("byte stream ended inside a chunk payload")
        if chunk_type == b"MTrk":
            notes.extend(_parse_track(data[pos : pos + chunk_len], stats))
            tracks_seen += 1
        pos += chunk_len
    if tracks_seen < n_tracks:
        raise TruncatedTrack(
            f"header declares {n_tracks} tracks but only {tracks_seen} present"
        )
    return Score(ppq=ppq, notes=notes)


def write_smf(score: Score) -> bytes:
    """Serialize a Score as a single-track format-0 SMF.

    Note-offs are emitted before note-ons at the same tick and running status
    is never used, so `parse_smf(write_smf(s))` reproduces the note multiset.
    """
    # (tick, order, pitch, status byte, velocity); offs sort before ons.
    events: list[tuple[int, int, int, int, int]] = []
    for note in score.notes:
        events.append((note.onset, 1, note.pitch, 0x90, WRITE_VELOCITY))
        events.append((note.onset + note.duration, 0, note.pitch, 0x80, 0x40))
    events.sort()

    track = bytearray()
    last_tick = 0
    for tick, _order, pitch, status, velocity in events:
        track += _write_vlq(tick - last_tick)
        track += bytes((status, pitch, velocity))
        last_tick = tick
    track += b"\x00\xff\x2f\x00"  # end of track

    out = bytearray()
    out += b"MThd" + struct.pack(">IHHH", 6, 0, 1, score.ppq)
    out += b"MTrk" + struct.pack(">I", len(track)) + track
    return bytes(out)
