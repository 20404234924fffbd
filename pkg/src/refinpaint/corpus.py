"""Dataset plumbing: hash splits, windows, fragment/subset masks, the cosine
masking scheduler, and a small procedural piano corpus.

Masks are plain boolean numpy arrays aligned to a token sequence.  By
convention a *fragment* mask marks the contiguous user-selected region, a
*subset* mask marks the positions inside a fragment that are hidden and
regenerated in one pass, and subset masks are always contained in their
fragment.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import remi
from .errors import DomainError
from .midi import NoteEvent, Score, parse_smf

DATA_DIR_ENV = "REFINPAINT_DATA_DIR"

TRAIN, VAL, TEST = "train", "val", "test"


class EmptySequence(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


def gamma(t: float) -> float:
    """Cosine masking schedule cos(pi*t/2) on [0, 1].

    Strictly decreasing, gamma(0) == 1 and gamma(1) == 0 exactly (the
    endpoint is pinned so that ceil(gamma(1) * N) is 0, not 1).
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    if t == 1.0:
        return 0.0
    return math.cos(math.pi * t / 2.0)


def split_by_hash(file_bytes: bytes) -> str:
    """Assign train/val/test from the file's MD5 leading hex digit.

    Digits 0-d go to train, e to validation, f to test (a 14/1/1 split of
    the sixteen digits).
    """
    digit = hashlib.md5(file_bytes).hexdigest()[0]
    if digit == "e":
        return VAL
    if digit == "f":
        return TEST
    return TRAIN


def sample_window_ids(
    ids: np.ndarray, length: int = 512, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Uniform contiguous window of exactly `length` token ids.

    Window starts land on a Bar or Position token when any such start is
    available; shorter sequences are right-padded with Pad.
    """
    if length < 1:
        raise DomainError(f"length {length} < 1")
    if rng is None:
        rng = np.random.default_rng()
    ids = np.asarray(ids)
    if ids.size == 0:
        raise EmptySequence("cannot window an empty sequence")
    if ids.size <= length:
        out = np.full(length, remi.PAD_ID, dtype=np.int64)
        out[: ids.size] = ids
        return out
    max_start = ids.size - length
    head = ids[: max_start + 1]
    boundary = (head == remi.BAR_ID) | (
        (head >= remi.VOCAB.id_of(remi.Token(remi.TokenKind.POSITION, 0)))
        & (head <= remi.VOCAB.id_of(remi.Token(remi.TokenKind.POSITION, 31)))
    )
    candidates = np.flatnonzero(boundary)
    if candidates.size:
        start = int(rng.choice(candidates))
    else:
        start = int(rng.integers(0, max_start + 1))
    return ids[start : start + length].astype(np.int64)


def sample_window(
    seq: remi.TokenSeq, length: int = 512, rng: np.random.Generator | None = None
) -> remi.TokenSeq:
    """TokenSeq front-end of sample_window_ids."""
    ids = np.asarray(seq.to_ids(), dtype=np.int64)
    return remi.TokenSeq.from_ids(sample_window_ids(ids, length, rng))


def sample_fragment(length: int, t1: float, rng: np.random.Generator) -> np.ndarray:
    """Contiguous fragment mask of round(t1 * length) bits at a uniform start."""
    if not 0.0 < t1 <= 1.0:
        raise DomainError(f"t1={t1} outside (0, 1]")
    if length < 1:
        raise DomainError(f"length {length} < 1")
    run = round(t1 * length)
    mask = np.zeros(length, dtype=bool)
    start = int(rng.integers(0, length - run + 1)) if run < length else 0
    mask[start : start + run] = True
    return mask


def random_subset_mask(
    m_u: np.ndarray, ratio: float, rng: np.random.Generator
) -> np.ndarray:
    """Uniform subset of the fragment bits with round(ratio * |m_u|) members."""
    if not 0.0 <= ratio <= 1.0:
        raise DomainError(f"ratio={ratio} outside [0, 1]")
    m_u = np.asarray(m_u, dtype=bool)
    candidates = np.flatnonzero(m_u)
    count = round(ratio * candidates.size)
    subset = np.zeros_like(m_u)
    if count:
        chosen = rng.choice(candidates, size=count, replace=False)
        subset[chosen] = True
    return subset


# --- procedural toy corpus ---------------------------------------------------
#
# Pieces are 4-bar phrase loops over a per-piece latent: a key, a chord
# progression, an accompaniment style and two deterministic melodic
# figuration patterns (runs, zigzags, arpeggios at a fixed rhythm unit).
# Given the latent, every bar is (nearly) determined, and bars with the same
# phrase slot repeat exactly.  The latent space is large (~10^6), so a model
# must infer the piece's patterns from visible context rather than memorize;
# inpainting quality then genuinely grows with visible context, and tokens a
# weak generator invents break patterns that a checker can verify locally.

_MAJOR = (0, 2, 4, 5, 7, 9, 11)
_MINOR = (0, 2, 3, 5, 7, 8, 10)
_PROGRESSIONS = ((0, 3, 4, 0), (0, 5, 3, 4), (0, 4, 5, 3), (0, 0, 3, 4))
_FORMS = ((0, 0, 1, 0), (0, 1, 0, 1), (0, 1, 1, 0), (0, 0, 0, 1))
_ACCOMP_STYLES = ("block", "alberti", "pulse", "broken")
_PATTERN_TYPES = ("run_up", "run_down", "zigzag", "arpeggio")

_PPQ = 480
_TICKS_PER_POS = _PPQ // remi.POSITIONS_PER_BEAT  # 60


def _scale_pitch(root: int, scale: tuple[int, ...], degree: int) -> int:
    octave, step = divmod(degree, len(scale))
    return root + 12 * octave + scale[step]


def _pattern_offsets(kind: str, n_steps: int) -> list[int]:
    """Deterministic scale-degree offsets of one figuration bar."""
    if kind == "run_up":
        return list(range(n_steps))
    if kind == "run_down":
        return list(range(n_steps - 1, -1, -1))
    if kind == "zigzag":
        cycle = (0, 1, 2, 1)
        return [cycle[k % 4] for k in range(n_steps)]
    cycle = (0, 2, 4, 7)  # arpeggio
    return [cycle[k % 4] for k in range(n_steps)]


def _make_pattern(rng) -> dict:
    """A per-piece melodic figuration: type, rhythm unit and start offset."""
    return {
        "kind": _PATTERN_TYPES[int(rng.integers(0, len(_PATTERN_TYPES)))],
        "unit": int(rng.choice((2, 4))),  # 16ths or 8ths
        "start": int(rng.integers(0, 7)),
    }


def _melody_bar(pattern, root, scale, chord_degree, bar_start):
    unit = pattern["unit"]
    n_steps = remi.POSITIONS_PER_BAR // unit
    offsets = _pattern_offsets(pattern["kind"], n_steps)
    notes = []
    for k, off in enumerate(offsets):
        degree = chord_degree + pattern["start"] + off
        notes.append((bar_start + k * unit, _scale_pitch(root, scale, degree), unit))
    return notes


def _accompaniment_bar(style, root, scale, degree, bar_start):
    chord = (degree, degree + 2, degree + 4)
    notes = []
    if style == "block":
        for half in (0, 16):
            for c in chord:
                notes.append((bar_start + half, _scale_pitch(root, scale, c), 16))
    elif style == "alberti":
        order = (0, 2, 1, 2, 0, 2, 1, 2)
        for k in range(8):
            notes.append((bar_start + k * 4, _scale_pitch(root, scale, chord[order[k]]), 4))
    elif style == "pulse":
        for k in range(4):
            for c in chord[:2]:
                notes.append((bar_start + k * 8, _scale_pitch(root, scale, c), 8))
    else:  # broken: root-fifth-octave figure
        figure = (0, 4, 7, 4, 0, 4, 7, 4)
        for k in range(8):
            notes.append((bar_start + k * 4, _scale_pitch(root, scale, degree + figure[k] // 2), 4))
    return notes


def generate_toy_corpus(n: int, rng: np.random.Generator) -> list[Score]:
    """Generate `n` short two-hand piano pieces, deterministic in the rng.

    Each piece draws its latent (key, progression, accompaniment style, two
    figuration patterns, phrase form) once and then unrolls 2-4 deterministic
    4-bar phrases from it.
    """
    if n < 1:
        raise DomainError(f"n={n} < 1")
    pieces = []
    for _ in range(n):
        root_low = 36 + int(rng.integers(0, 12))  # accompaniment around C2..B2
        root_mel = root_low + 24
        mode = _MAJOR if rng.integers(0, 2) else _MINOR
        progression = _PROGRESSIONS[int(rng.integers(0, len(_PROGRESSIONS)))]
        form = _FORMS[int(rng.integers(0, len(_FORMS)))]
        style = _ACCOMP_STYLES[int(rng.integers(0, len(_ACCOMP_STYLES)))]
        patterns = (_make_pattern(rng), _make_pattern(rng))
        n_phrases = int(rng.integers(2, 5))  # 8, 12 or 16 bars
        notes: list[tuple[int, int, int]] = []
        for bar in range(4 * n_phrases):
            bar_start = bar * remi.POSITIONS_PER_BAR
            degree = progression[bar % 4]
            notes += _accompaniment_bar(style, root_low, mode, degree, bar_start)
            notes += _melody_bar(patterns[form[bar % 4]], root_mel, mode, degree, bar_start)
        events = [
            NoteEvent(pitch, pos * _TICKS_PER_POS, dur * _TICKS_PER_POS)
            for pos, pitch, dur in notes
            if remi.PITCH_MIN <= pitch <= remi.PITCH_MAX
        ]
        pieces.append(Score(ppq=_PPQ, notes=events))
    return pieces


# --- corpus manifest and loading ---------------------------------------------


@dataclass
class ManifestEntry:
    path: str
    md5: str
    split: str
    n_tokens: int


def data_dir(override: str | None = None) -> Path:
    """Corpus root: explicit override, else $REFINPAINT_DATA_DIR, else cwd."""
    if override:
        return Path(override)
    return Path(os.environ.get(DATA_DIR_ENV, "."))


def build_manifest(midi_dir: Path) -> list[ManifestEntry]:
    """Scan a directory of .mid files into manifest entries."""
    entries = []
    for path in sorted(Path(midi_dir).glob("*.mid")):
        raw = path.read_bytes()
        seq = remi.encode(parse_smf(raw))
        entries.append(
            ManifestEntry(
                path=str(path),
                md5=hashlib.md5(raw).hexdigest(),
                split=split_by_hash(raw),
                n_tokens=len(seq),
            )
        )
    if not entries:
        raise EmptyCorpus(f"no .mid files under {midi_dir}")
    return entries


def write_manifest(entries: list[ManifestEntry], path: Path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e.__dict__, sort_keys=True) + "\n")


def read_manifest(path: Path) -> list[ManifestEntry]:
    entries = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                entries.append(ManifestEntry(**json.loads(line)))
    return entries


def write_toy_corpus(n: int, seed: int, out_dir: Path) -> list[ManifestEntry]:
    """Materialize a toy corpus as .mid files plus a manifest."""
    from .midi import write_smf

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i, score in enumerate(generate_toy_corpus(n, rng)):
        (out_dir / f"toy_{i:05d}.mid").write_bytes(write_smf(score))
    entries = build_manifest(out_dir)
    write_manifest(entries, out_dir / "manifest.jsonl")
    return entries


def load_split_sequences(midi_dir: Path) -> dict[str, list[np.ndarray]]:
    """Parse and tokenize every .mid under `midi_dir`, grouped by hash split."""
    splits: dict[str, list[np.ndarray]] = {TRAIN: [], VAL: [], TEST: []}
    found = False
    for path in sorted(Path(midi_dir).glob("*.mid")):
        found = True
        raw = path.read_bytes()
        ids = np.asarray(remi.encode(parse_smf(raw)).to_ids(), dtype=np.int64)
        if ids.size:
            splits[split_by_hash(raw)].append(ids)
    if not found:
        raise EmptyCorpus(f"no .mid files under {midi_dir}")
    return splits
