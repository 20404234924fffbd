"""REMI token vocabulary and Score <-> token-sequence conversion.

Events are Bar / Position / Pitch / Duration, no velocity, on a fixed grid:
4/4 bars, 32 positions per bar (8 per beat), 88 piano pitches (21..108) and
64 duration bins of 1/8 beat each.  Together with the four special tokens
this gives a vocabulary of exactly 189 ids.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .midi import NoteEvent, Score

POSITIONS_PER_BAR = 32
POSITIONS_PER_BEAT = 8
PITCH_MIN = 21
PITCH_MAX = 108
DURATION_MAX = 64
DECODE_PPQ = 480

VOCAB_VERSION = 1


class TokenKind(str, Enum):
    PAD = "Pad"
    MASK = "Mask"
    BOS = "Bos"
    EOS = "Eos"
    BAR = "Bar"
    POSITION = "Position"
    PITCH = "Pitch"
    DURATION = "Duration"


_VALUED = {TokenKind.POSITION, TokenKind.PITCH, TokenKind.DURATION}
_VALUE_RANGE = {
    TokenKind.POSITION: (0, POSITIONS_PER_BAR - 1),
    TokenKind.PITCH: (PITCH_MIN, PITCH_MAX),
    TokenKind.DURATION: (1, DURATION_MAX),
}


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: int | None = None

    def __post_init__(self) -> None:
        if self.kind in _VALUED:
            lo, hi = _VALUE_RANGE[self.kind]
            if self.value is None or not lo <= self.value <= hi:
                raise ValueError(f"{self.kind.value} value {self.value} outside {lo}..{hi}")
        elif self.value is not None:
            raise ValueError(f"{self.kind.value} takes no value")

    def __str__(self) -> str:
        if self.value is None:
            return self.kind.value
        return f"{self.kind.value}({self.value})"


PAD = Token(TokenKind.PAD)
MASK = Token(TokenKind.MASK)
BOS = Token(TokenKind.BOS)
EOS = Token(TokenKind.EOS)
BAR = Token(TokenKind.BAR)

_TOKEN_RE = re.compile(r"^([A-Za-z]+)(?:\((-?\d+)\))?$")


def parse_token(text: str) -> Token:
    """Parse the `KIND` / `KIND(value)` line format back into a Token."""
    m = _TOKEN_RE.match(text.strip())
    if not m:
        raise ValueError(f"unparseable token {text!r}")
    kind = TokenKind(m.group(1))
    value = int(m.group(2)) if m.group(2) is not None else None
    return Token(kind, value)


class Vocab:
    """Dense bijection between tokens and integer ids.

    Layout is fixed: Pad=0, Mask=1, Bos=2, Eos=3, then Bar, the 32 positions,
    the 88 pitches and the 64 durations, 189 ids in total.
    """

    def __init__(self) -> None:
        tokens = [PAD, MASK, BOS, EOS, BAR]
        tokens += [Token(TokenKind.POSITION, p) for p in range(POSITIONS_PER_BAR)]
        tokens += [Token(TokenKind.PITCH, n) for n in range(PITCH_MIN, PITCH_MAX + 1)]
        tokens += [Token(TokenKind.DURATION, d) for d in range(1, DURATION_MAX + 1)]
        self._tokens: tuple[Token, ...] = tuple(tokens)
        self._ids: dict[Token, int] = {t: i for i, t in enumerate(tokens)}
        assert len(self._tokens) == 4 + 1 + 32 + 88 + 64 == 189
        assert self._ids[PAD] == 0 and self._ids[MASK] == 1
        assert self._ids[BOS] == 2 and self._ids[EOS] == 3

    def __len__(self) -> int:
        return len(self._tokens)

    def id_of(self, token: Token) -> int:
        return self._ids[token]

    def token_of(self, token_id: int) -> Token:
        return self._tokens[token_id]

    def manifest(self) -> dict:
        """Versioned JSON-ready vocabulary listing, bit-exact across platforms."""
        return {
            "version": VOCAB_VERSION,
            "entries": [
                {"id": i, "kind": t.kind.value, "value": t.value}
                for i, t in enumerate(self._tokens)
            ],
        }

    def checksum(self) -> str:
        blob = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


VOCAB = Vocab()

PAD_ID = VOCAB.id_of(PAD)
MASK_ID = VOCAB.id_of(MASK)
BOS_ID = VOCAB.id_of(BOS)
EOS_ID = VOCAB.id_of(EOS)
BAR_ID = VOCAB.id_of(BAR)


class GrammarViolation(Exception):
    def __init__(self, index: int, message: str):
        super().__init__(f"token {index}: {message}")
        self.index = index


class PitchOutOfRange(Exception):
    """Raised only in strict contexts; encode counts and drops instead."""


@dataclass
class EncodeStats:
    dropped_pitches: int = 0
    merged_duplicates: int = 0


@dataclass
class TokenSeq:
    """An ordered REMI token sequence.

    `provenance`, when present, maps a token index back to the NoteEvent it
    was derived from (both the Pitch and the Duration index of a note point
    at the same event).
    """

    tokens: list[Token] = field(default_factory=list)
    provenance: dict[int, NoteEvent] | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenSeq) and self.tokens == other.tokens

    def to_ids(self, vocab: Vocab = VOCAB) -> list[int]:
        return [vocab.id_of(t) for t in self.tokens]

    @classmethod
    def from_ids(cls, ids, vocab: Vocab = VOCAB) -> "TokenSeq":
        return cls([vocab.token_of(int(i)) for i in ids])

    def dump_lines(self) -> str:
        """One token per line, `KIND` or `KIND(value)`."""
        return "\n".join(str(t) for t in self.tokens) + ("\n" if self.tokens else "")

    @classmethod
    def from_lines(cls, text: str) -> "TokenSeq":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        return cls([parse_token(ln) for ln in lines])


def first_grammar_violation(seq: TokenSeq) -> tuple[int, str] | None:
    """Index and reason of the first grammar break, or None if well formed.

    The grammar: Position only after a Bar has opened; Pitch only at a set
    position; every Pitch immediately followed by exactly one Duration; Pad
    only as trailing filler; Mask/Bos/Eos never inside content.
    """
    bar_open = False
    position_set = False
    expecting_duration = False
    padding = False
    for i, tok in enumerate(seq.tokens):
        if padding and tok.kind is not TokenKind.PAD:
            return i, "content after Pad"
        if expecting_duration:
            if tok.kind is not TokenKind.DURATION:
                return i, "Pitch not followed by Duration"
            expecting_duration = False
            continue
        if tok.kind is TokenKind.BAR:
            bar_open = True
            position_set = False
        elif tok.kind is TokenKind.POSITION:
            if not bar_open:
                return i, "Position before any Bar"
            position_set = True
        elif tok.kind is TokenKind.PITCH:
            if not position_set:
                return i, "Pitch with no current Position"
            expecting_duration = True
        elif tok.kind is TokenKind.DURATION:
            return i, "Duration with no preceding Pitch"
        elif tok.kind is TokenKind.PAD:
            padding = True
        else:
            return i, f"{tok.kind.value} inside content"
    if expecting_duration:
        return len(seq.tokens) - 1, "Pitch at end with no Duration"
    return None


def is_grammatical(seq: TokenSeq) -> bool:
    return first_grammar_violation(seq) is None


def _quantize_notes(score: Score, stats: EncodeStats) -> list[tuple[int, int, int]]:
    """Snap notes to the position grid: (grid_position, pitch, duration_units)."""
    unit = score.ppq / POSITIONS_PER_BEAT
    quantized: dict[tuple[int, int], int] = {}
    for note in score.notes:
        if not PITCH_MIN <= note.pitch <= PITCH_MAX:
            stats.dropped_pitches += 1
            continue
        grid_pos = round(note.onset / unit)
        dur = round(note.duration / unit)
        dur = min(max(dur, 1), DURATION_MAX)
        key = (grid_pos, note.pitch)
        if key in quantized:
            stats.merged_duplicates += 1
            quantized[key] = max(quantized[key], dur)
        else:
            quantized[key] = dur
    return sorted((pos, pitch, dur) for (pos, pitch), dur in quantized.items())


def encode(score: Score, stats: EncodeStats | None = None) -> TokenSeq:
    """Tokenize a Score.

    Onsets snap to the 32-per-bar grid and durations to 1/8-beat multiples
    (clipped to 1..64).  Every bar up to the last occupied one emits a Bar
    token; within a bar, occupied positions ascend and notes at a position
    ascend by pitch.  Duplicate (position, pitch) notes merge, keeping the
    longer duration; pitches outside 21..108 are dropped and counted.
    """
    if stats is None:
        stats = EncodeStats()
    quantized = _quantize_notes(score, stats)
    if not quantized:
        return TokenSeq([])

    tokens: list[Token] = []
    provenance: dict[int, NoteEvent] = {}
    last_bar = quantized[-1][0] // POSITIONS_PER_BAR
    by_bar: dict[int, list[tuple[int, int, int]]] = {}
    for pos, pitch, dur in quantized:
        by_bar.setdefault(pos // POSITIONS_PER_BAR, []).append((pos, pitch, dur))

    for bar in range(last_bar + 1):
        tokens.append(BAR)
        current_pos = None
        for pos, pitch, dur in by_bar.get(bar, []):
            if pos % POSITIONS_PER_BAR != current_pos:
                current_pos = pos % POSITIONS_PER_BAR
                tokens.append(Token(TokenKind.POSITION, current_pos))
            source = NoteEvent(pitch, pos * (DECODE_PPQ // POSITIONS_PER_BEAT),
                               dur * (DECODE_PPQ // POSITIONS_PER_BEAT))
            provenance[len(tokens)] = source
            tokens.append(Token(TokenKind.PITCH, pitch))
            provenance[len(tokens)] = source
            tokens.append(Token(TokenKind.DURATION, dur))
    return TokenSeq(tokens, provenance)


def decode(seq: TokenSeq, strict: bool = True, start_bar: int = 0) -> Score:
    """Rebuild a Score at PPQ 480 from a token sequence.

    With `strict`, the first grammar break raises GrammarViolation; otherwise
    offending tokens are skipped (a Position with no Bar opens bar 0, and a
    trailing lone Pitch is dropped), which is what generated sequences need.
    `start_bar` is the bar index the first Bar token lands on, letting a
    token segment cut from a larger piece keep its original timing.
    """
    if strict:
        violation = first_grammar_violation(seq)
        if violation is not None:
            raise GrammarViolation(violation[0], violation[1])
        for i, tok in enumerate(seq.tokens):
            if tok.kind is TokenKind.MASK:
                raise GrammarViolation(i, "Mask token in decodable sequence")

    unit = DECODE_PPQ // POSITIONS_PER_BEAT
    notes: list[NoteEvent] = []
    bar = start_bar - 1
    position: int | None = None
    pending_pitch: int | None = None
    for tok in seq.tokens:
        if tok.kind is TokenKind.BAR:
            bar += 1
            position = None
            pending_pitch = None
        elif tok.kind is TokenKind.POSITION:
            if bar < start_bar:
                bar = start_bar  # orphan content before any Bar stays in place
            position = tok.value
            pending_pitch = None
        elif tok.kind is TokenKind.PITCH:
            if position is not None:
                pending_pitch = tok.value
        elif tok.kind is TokenKind.DURATION:
            if pending_pitch is not None and position is not None:
                onset = (bar * POSITIONS_PER_BAR + position) * unit
                notes.append(NoteEvent(pending_pitch, onset, tok.value * unit))
            pending_pitch = None
    return Score(ppq=DECODE_PPQ, notes=notes)


@dataclass(frozen=True)
class NoteSpan:
    """A decoded note plus the token indices it came from.

    `bar_index` and `position_index` point at the governing Bar and Position
    tokens (-1 when the segment starts mid-bar), so a client can pin a whole
    note, time coordinates included.
    """

    pitch: int
    onset: int  # ticks at PPQ 480
    duration: int  # ticks
    bar: int
    pitch_index: int
    duration_index: int
    bar_index: int = -1
    position_index: int = -1


def note_spans(seq: TokenSeq) -> list[NoteSpan]:
    """Walk a (possibly imperfect) sequence into notes with token coordinates.

    Lenient by design: stray tokens are skipped the same way lenient decode
    skips them, so generated sequences always yield a note list.
    """
    unit = DECODE_PPQ // POSITIONS_PER_BEAT
    spans: list[NoteSpan] = []
    bar = -1
    bar_idx = -1
    position: int | None = None
    position_idx = -1
    pending: tuple[int, int] | None = None  # (pitch, token index)
    for i, tok in enumerate(seq.tokens):
        if tok.kind is TokenKind.BAR:
            bar += 1
            bar_idx = i
            position = None
            pending = None
        elif tok.kind is TokenKind.POSITION:
            if bar < 0:
                bar = 0
            position = tok.value
            position_idx = i
            pending = None
        elif tok.kind is TokenKind.PITCH:
            pending = (tok.value, i) if position is not None else None
        elif tok.kind is TokenKind.DURATION:
            if pending is not None and position is not None:
                pitch, p_idx = pending
                onset = (bar * POSITIONS_PER_BAR + position) * unit
                spans.append(
                    NoteSpan(pitch, onset, tok.value * unit, bar, p_idx, i,
                             bar_idx, position_idx)
                )
            pending = None
    return spans


def transpose_ids(ids, semitones: int):
    """Id-level transposition used on the training hot path.

    Returns (ids, skipped); skipped means a shifted pitch would have left
    21..108 and the input comes back unchanged.
    """
    if abs(semitones) > 6:
        raise ValueError(f"|semitones| must be <= 6, got {semitones}")
    ids = np.asarray(ids)
    if semitones == 0:
        return ids, False
    lo = VOCAB.id_of(Token(TokenKind.PITCH, PITCH_MIN))
    hi = VOCAB.id_of(Token(TokenKind.PITCH, PITCH_MAX))
    pitches = (ids >= lo) & (ids <= hi)
    shifted = ids + np.where(pitches, semitones, 0)
    if ((shifted[pitches] < lo) | (shifted[pitches] > hi)).any():
        return ids, True
    return shifted, False


def transpose(seq: TokenSeq, semitones: int) -> tuple[TokenSeq, bool]:
    """Shift every Pitch token by `semitones`, up to half an octave.

    Returns (sequence, skipped).  If any shifted pitch would leave 21..108
    the input is returned unchanged with skipped=True.
    """
    ids, skipped = transpose_ids(seq.to_ids(), semitones)
    if skipped or semitones == 0:
        return seq, skipped
    return TokenSeq.from_ids(ids), False
