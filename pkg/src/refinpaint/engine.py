"""The iterative generate / critique / re-mask loop.

One run starts from a fragment to rewrite, fills it completely, has the
feedback model score every fragment token, keeps the most realistic ones and
regenerates the rest, shrinking the regenerated set along the cosine
schedule.  The record with the best global feedback score wins.  A callback
may inject human edits between the critique and the re-mask of each
iteration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import autograd as ag
from .corpus import gamma
from .errors import DomainError
from .models import FeedbackModel, InpaintingModel, VocabMismatch
from .remi import BOS_ID, EOS_ID, MASK_ID, VOCAB, TokenSeq

_BANNED_SAMPLES = (MASK_ID, BOS_ID, EOS_ID)  # never valid generated content
_ARGMAX_TEMPERATURE = 1e-6


class EmptyFragment(ValueError):
    pass


class PositionOutsideFragment(ValueError):
    pass


class CallbackAbort(Exception):
    """Raised by an iteration callback to cancel the run cleanly."""


@dataclass
class EngineConfig:
    iterations: int = 10
    temperature: float = 1.0
    top_p: float = 1.0
    keep_override: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise DomainError(f"iterations {self.iterations} < 1")
        if self.temperature < 0:
            raise DomainError(f"temperature {self.temperature} < 0")
        if not 0.0 < self.top_p <= 1.0:
            raise DomainError(f"top_p {self.top_p} outside (0, 1]")


@dataclass
class Heatmap:
    """P(real) per position, defined exactly on the fragment (NaN elsewhere)."""

    probs: np.ndarray
    fragment: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray, m_u: np.ndarray) -> "Heatmap":
        probs = np.full(logits.shape, np.nan)
        probs[m_u] = ag.sigmoid(logits[m_u])
        return cls(probs=probs, fragment=np.asarray(m_u, dtype=bool))


@dataclass
class Edit:
    kind: Literal["force_keep", "force_regenerate", "replace_token", "set_keep_count"]
    pos: int | None = None
    token_id: int | None = None
    keep_count: int | None = None


@dataclass
class IterationRecord:
    index: int
    x_hat: np.ndarray
    heatmap: Heatmap
    mask_next: np.ndarray
    gfs: float
    regen_count: int
    human_edits: list[Edit] = field(default_factory=list)


def schedule_masked_count(i: int, iterations: int, n_fragment: int) -> int:
    """Tokens to regenerate going into iteration i+1: ceil(gamma((i+1)/T) * N).

    Non-increasing in i, and 0 after the final pass, so the kept-realistic
    share grows over the run.
    """
    if not 0 <= i < iterations:
        raise DomainError(f"i={i} outside [0, {iterations})")
    if n_fragment < 0:
        raise DomainError(f"N={n_fragment} < 0")
    return math.ceil(gamma((i + 1) / iterations) * n_fragment)


def gfs(heatmap: Heatmap, m_u: np.ndarray) -> float:
    """Global feedback score: mean P(real) over the fragment."""
    m_u = np.asarray(m_u, dtype=bool)
    if not m_u.any():
        raise EmptyFragment("no fragment positions")
    return float(np.mean(heatmap.probs[m_u]))


def create_mask(heatmap: Heatmap, regen_count: int) -> np.ndarray:
    """Mark the `regen_count` least-realistic fragment positions to regenerate.

    Ties break toward the lower position index; everything else in the
    fragment is kept.
    """
    frag_idx = np.flatnonzero(heatmap.fragment)
    if not 0 <= regen_count <= frag_idx.size:
        raise DomainError(f"regen_count {regen_count} outside [0, {frag_idx.size}]")
    regen = np.zeros(heatmap.probs.shape[0], dtype=bool)
    if regen_count:
        order = np.argsort(heatmap.probs[frag_idx], kind="stable")
        regen[frag_idx[order[:regen_count]]] = True
    return regen


def sample_fill(
    x_masked: np.ndarray,
    m: np.ndarray,
    inpainter: InpaintingModel,
    temperature: float,
    top_p: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One left-to-right decoding pass over a masked sequence.

    Known positions are teacher-forced into the decoder context; masked
    positions sample from the temperature/top-p filtered next-token
    distribution.  Accepts [L] or [B, L] inputs.
    """
    x = np.asarray(x_masked, dtype=np.int64)
    mask = np.asarray(m, dtype=bool)
    squeeze = x.ndim == 1
    if squeeze:
        x, mask = x[None, :], mask[None, :]
    if x.shape != mask.shape:
        raise DomainError(f"mask {mask.shape} vs ids {x.shape}")
    if ((x == MASK_ID) != mask).any():
        raise DomainError("Mask token ids must appear exactly at masked positions")
    if not mask.any():
        out = x.copy()
        return out[0] if squeeze else out

    b, length = x.shape
    enc = inpainter.encode_np(x, mask)
    cache = inpainter.decoder_cache(b)
    out = np.empty_like(x)
    prev = np.full(b, BOS_ID, dtype=np.int64)
    argmax = temperature < _ARGMAX_TEMPERATURE
    for t in range(length):
        logits = cache.step(prev, enc)
        col_mask = mask[:, t]
        if col_mask.any():
            z = logits.astype(np.float64)
            z[:, list(_BANNED_SAMPLES)] = -np.inf
            if argmax:
                choice = z.argmax(axis=-1)
            else:
                z /= temperature
                z -= z.max(axis=-1, keepdims=True)
                probs = np.exp(z)
                probs /= probs.sum(axis=-1, keepdims=True)
                if top_p < 1.0:
                    probs = _nucleus(probs, top_p)
                cum = np.cumsum(probs, axis=-1)
                u = rng.random(b)
                choice = (cum < u[:, None]).sum(axis=-1)
            out[:, t] = np.where(col_mask, choice, x[:, t])
        else:
            out[:, t] = x[:, t]
        prev = out[:, t]
    return out[0] if squeeze else out


def _nucleus(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Zero out everything past the smallest prefix of mass >= top_p."""
    order = np.argsort(-probs, axis=-1)
    sorted_probs = np.take_along_axis(probs, order, axis=-1)
    cum = np.cumsum(sorted_probs, axis=-1)
    keep_sorted = cum - sorted_probs < top_p
    keep = np.zeros_like(probs, dtype=bool)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    out = np.where(keep, probs, 0.0)
    return out / out.sum(axis=-1, keepdims=True)


def critique(feedback: FeedbackModel, x_hat: np.ndarray, m_u: np.ndarray) -> Heatmap:
    """Run the feedback model and shape its output into a fragment heatmap."""
    with ag.no_grad():
        logits = feedback.forward(x_hat, m_u).data.astype(np.float64)
    return Heatmap.from_logits(logits, m_u)


def apply_edits(
    mask_next: np.ndarray,
    content: np.ndarray,
    edits: list[Edit],
    heatmap: Heatmap,
) -> tuple[np.ndarray, np.ndarray]:
    """Fold human edits into the next iteration's mask and content.

    Edits apply in list order: force_keep / force_regenerate flip single
    positions, replace_token substitutes content and keeps the position, and
    set_keep_count rebuilds the mask from the heatmap so that exactly
    |fragment| - k positions regenerate.  Later edits win conflicts.
    """
    mask_next = mask_next.copy()
    content = content.copy()
    m_u = heatmap.fragment
    n = int(m_u.sum())
    for edit in edits:
        if edit.kind == "set_keep_count":
            if edit.keep_count is None or not 0 <= edit.keep_count <= n:
                raise DomainError(f"keep_count {edit.keep_count} outside [0, {n}]")
            mask_next = create_mask(heatmap, n - edit.keep_count)
            continue
        if edit.pos is None or not (0 <= edit.pos < m_u.size and m_u[edit.pos]):
            raise PositionOutsideFragment(f"position {edit.pos} outside the fragment")
        if edit.kind == "force_keep":
            mask_next[edit.pos] = False
        elif edit.kind == "force_regenerate":
            mask_next[edit.pos] = True
        elif edit.kind == "replace_token":
            if edit.token_id is None or not 0 <= edit.token_id < len(VOCAB):
                raise DomainError(f"bad token id {edit.token_id}")
            content[edit.pos] = edit.token_id
            mask_next[edit.pos] = False
        else:
            raise DomainError(f"unknown edit kind {edit.kind!r}")
    return mask_next, content


def initial_regenerate_mask(
    x: np.ndarray,
    m_u: np.ndarray,
    feedback: FeedbackModel,
    keep_override: int | None,
) -> np.ndarray:
    """Complete inpainting by default; proofreading keeps the k best tokens."""
    m_u = np.asarray(m_u, dtype=bool)
    if keep_override is None:
        return m_u.copy()
    n = int(m_u.sum())
    keep = min(max(keep_override, 0), n)
    return create_mask(critique(feedback, x, m_u), n - keep)


def refinpaint(
    x: np.ndarray,
    m_u: np.ndarray,
    inpainter: InpaintingModel,
    feedback: FeedbackModel,
    config: EngineConfig,
    on_iteration: Callable[[IterationRecord], list[Edit] | None] | None = None,
) -> tuple[list[IterationRecord], int]:
    """Run the full loop; returns every iteration record and the index of the
    one with the highest global feedback score (later iteration wins ties)."""
    if inpainter.vocab_checksum != feedback.vocab_checksum:
        raise VocabMismatch("inpainter and feedback use different vocabularies")
    x = np.asarray(x, dtype=np.int64)
    m_u = np.asarray(m_u, dtype=bool)
    if x.ndim != 1 or m_u.shape != x.shape:
        raise DomainError(f"x {x.shape} and m_u {m_u.shape} must be equal 1-D")
    n = int(m_u.sum())
    if n == 0:
        raise EmptyFragment("fragment mask is empty")

    rng = np.random.default_rng(config.seed)
    total = config.iterations
    regen = initial_regenerate_mask(x, m_u, feedback, config.keep_override)
    content = x.copy()
    records: list[IterationRecord] = []
    for i in range(total):
        x_masked = np.where(regen, MASK_ID, content)
        x_hat = sample_fill(x_masked, regen, inpainter, config.temperature, config.top_p, rng)
        heatmap = critique(feedback, x_hat, m_u)
        score = gfs(heatmap, m_u)
        if config.keep_override is None:
            next_count = schedule_masked_count(i, total, n)
        else:
            next_count = n - min(max(config.keep_override, 0), n)
        record = IterationRecord(
            index=i,
            x_hat=x_hat,
            heatmap=heatmap,
            mask_next=create_mask(heatmap, next_count),
            gfs=score,
            regen_count=int(regen.sum()),
        )
        if on_iteration is not None:
            edits = on_iteration(record) or []
            if edits:
                record.mask_next, x_hat = apply_edits(record.mask_next, x_hat, edits, heatmap)
                record.human_edits = list(edits)
        records.append(record)
        content = x_hat
        regen = record.mask_next
    selected = max(range(total), key=lambda idx: (records[idx].gfs, idx))
    return records, selected


def trace_dict(
    records: list[IterationRecord],
    selected: int,
    config: EngineConfig,
    m_u: np.ndarray,
) -> dict:
    """JSON-ready export of one run, consumed by the eval harness and the UI."""

    def heat_list(h: Heatmap):
        return [None if math.isnan(v) else round(float(v), 6) for v in h.probs]

    return {
        "config": {
            "iterations": config.iterations,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "keep_override": config.keep_override,
            "seed": config.seed,
        },
        "fragment": [int(i) for i in np.flatnonzero(m_u)],
        "iterations": [
            {
                "i": r.index,
                "gfs": round(r.gfs, 9),
                "regen_count": r.regen_count,
                "tokens": [str(t) for t in TokenSeq.from_ids(r.x_hat)],
                "heatmap": heat_list(r.heatmap),
            }
            for r in records
        ],
        "selected_index": selected,
    }


def write_trace(path, records, selected, config, m_u) -> None:
    with open(path, "w") as fh:
        json.dump(trace_dict(records, selected, config, m_u), fh, indent=1)
