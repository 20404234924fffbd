"""Training loops for the inpainter, the feedback classifier and the
evaluator language model.

The inpainter trains on randomly sampled fragments: draw a window, choose a
contiguous fragment whose relative length is uniform on [0.1, 0.6], hide a
cosine-scheduled share of it, and minimize cross-entropy on exactly the
hidden positions.  The feedback model then learns to tell those regenerated
tokens from untouched ones, using the frozen inpainter as its forger.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import corpus as corpus_mod
from .corpus import EmptyCorpus, gamma, random_subset_mask, sample_fragment, sample_window_ids
from .engine import sample_fill
from .errors import DomainError
from .models import (
    EvaluatorModel,
    FeedbackModel,
    InpaintingModel,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamW, clip_global_norm, lr_at
from .remi import BOS_ID, MASK_ID, transpose_ids


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    batch_size: int = 12
    steps: int = 1500
    warmup: int = 200
    peak_lr: float = 3e-4
    seed: int = 0
    augment: bool = True
    window_len: int = 192
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    eval_every: int = 200
    patience: int | None = 5  # evaluations without val improvement before stopping
    checkpoint_every: int | None = None
    loss_scope: str = "masked_only"
    temperature: float = 1.0  # inpainter sampling while forging feedback data

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise DomainError(f"batch_size {self.batch_size} < 1")
        if not 0 < self.warmup < self.steps:
            raise DomainError(f"need 0 < warmup ({self.warmup}) < steps ({self.steps})")
        if self.loss_scope != "masked_only":
            raise DomainError(f"unsupported loss_scope {self.loss_scope!r}")


@dataclass
class TrainReport:
    losses: list[float]
    val_metrics: dict[str, float]
    checkpoint_path: str
    steps_run: int
    stopped_early: bool = False
    lr_series: list[float] = field(default_factory=list)


def _resolve_corpus(corpus) -> dict[str, list[np.ndarray]]:
    if isinstance(corpus, (str, Path)):
        corpus = corpus_mod.load_split_sequences(Path(corpus))
    if not corpus.get(corpus_mod.TRAIN):
        raise EmptyCorpus("no training sequences")
    return corpus


def _sample_batch(seqs, cfg: TrainConfig, rng) -> np.ndarray:
    rows = []
    for _ in range(cfg.batch_size):
        ids = seqs[int(rng.integers(0, len(seqs)))]
        window = sample_window_ids(ids, cfg.window_len, rng)
        if cfg.augment:
            shift = int(rng.integers(-6, 7))
            window, _skipped = transpose_ids(window, shift)
        rows.append(window)
    return np.stack(rows)


def _sample_masks(cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample fragment and regeneration-subset masks (Algorithms 1-2)."""
    m_u = np.zeros((cfg.batch_size, cfg.window_len), dtype=bool)
    m_s = np.zeros_like(m_u)
    for b in range(cfg.batch_size):
        t1 = float(rng.uniform(0.1, 0.6))
        t2 = float(rng.uniform(0.0, 1.0))
        m_u[b] = sample_fragment(cfg.window_len, t1, rng)
        m_s[b] = random_subset_mask(m_u[b], gamma(t2), rng)
    assert not (m_s & ~m_u).any(), "subset mask escaped its fragment"
    return m_u, m_s


def _decoder_input(x: np.ndarray) -> np.ndarray:
    return np.concatenate([np.full((x.shape[0], 1), BOS_ID, dtype=x.dtype), x[:, :-1]], axis=1)


class _Loop:
    """Shared scaffolding: schedule, metrics, early stop, checkpoints."""

    def __init__(self, model, cfg: TrainConfig, out_dir: Path, kind: str):
        self.model = model
        self.cfg = cfg
        self.kind = kind
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.opt = AdamW(model.params, lr=0.0, weight_decay=cfg.weight_decay)
        self.losses: list[float] = []
        self.lrs: list[float] = []
        self.best_val = np.inf
        self.stale_evals = 0
        self.metrics_fh = open(self.out_dir / f"metrics_{kind}.jsonl", "w")

    def step(self, loss) -> None:
        value = loss.item()
        if not np.isfinite(value):
            self.metrics_fh.close()
            raise NonFiniteLoss(len(self.losses))
        loss.backward()
        clip_global_norm(self.model.params, self.cfg.clip_norm)
        lr = lr_at(len(self.losses) + 1, self.cfg.warmup, self.cfg.peak_lr, self.cfg.steps)
        self.opt.lr = lr
        self.opt.step()
        self.opt.zero_grad()
        self.losses.append(value)
        self.lrs.append(lr)
        self.metrics_fh.write(
            json.dumps({"step": len(self.losses), "loss": round(value, 6), "lr": lr}) + "\n"
        )

    def should_stop(self, val: float) -> bool:
        if val < self.best_val - 1e-4:
            self.best_val = val
            self.stale_evals = 0
        else:
            self.stale_evals += 1
        return self.cfg.patience is not None and self.stale_evals >= self.cfg.patience

    def maybe_checkpoint(self) -> None:
        every = self.cfg.checkpoint_every
        if every and len(self.losses) % every == 0:
            path = self.out_dir / f"{self.kind}_step{len(self.losses)}.ckpt"
            path.write_bytes(save_checkpoint(self.model))

    def finish(self, val_metrics: dict[str, float], stopped: bool) -> TrainReport:
        self.metrics_fh.close()
        path = self.out_dir / f"{self.kind}.ckpt"
        path.write_bytes(save_checkpoint(self.model))
        return TrainReport(
            losses=self.losses,
            val_metrics=val_metrics,
            checkpoint_path=str(path),
            steps_run=len(self.losses),
            stopped_early=stopped,
            lr_series=self.lrs,
        )


def _val_batches(splits, cfg: TrainConfig, n_batches: int, seed: int):
    """Fixed validation batches, identical at every evaluation."""
    seqs = splits.get(corpus_mod.VAL) or splits[corpus_mod.TRAIN]
    rng = np.random.default_rng(seed)
    batches = []
    for _ in range(n_batches):
        x = _sample_batch(seqs, cfg, rng)
        m_u, m_s = _sample_masks(cfg, rng)
        batches.append((x, m_u, m_s))
    return batches


def train_inpainter(
    corpus,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    out_dir: Path = Path("runs/inpainter"),
) -> TrainReport:
    """Masked-fragment reconstruction training (cross-entropy on the subset)."""
    splits = _resolve_corpus(corpus)
    model_config = model_config or ModelConfig(max_len=config.window_len)
    model = InpaintingModel(model_config, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng(config.seed + 1)
    val_batches = _val_batches(splits, config, 4, config.seed + 2)
    loop = _Loop(model, config, out_dir, model.kind)

    def val_nll() -> float:
        with ag.no_grad():
            total = 0.0
            for x, _m_u, m_s in val_batches:
                enc_in = np.where(m_s, MASK_ID, x)
                logits = model.forward(enc_in, m_s, _decoder_input(x))
                total += ag.cross_entropy(logits, x, m_s).item()
        return total / len(val_batches)

    stopped = False
    for step_i in range(config.steps):
        x = _sample_batch(splits[corpus_mod.TRAIN], config, rng)
        m_u, m_s = _sample_masks(config, rng)
        enc_in = np.where(m_s, MASK_ID, x)
        logits = model.forward(enc_in, m_s, _decoder_input(x), rng=drop_rng, train=True)
        loop.step(ag.cross_entropy(logits, x, m_s))
        loop.maybe_checkpoint()
        if (step_i + 1) % config.eval_every == 0 and loop.should_stop(val_nll()):
            stopped = True
            break
    return loop.finish({"val_masked_nll": val_nll()}, stopped)


def train_feedback(
    corpus,
    inpainter: InpaintingModel | bytes | str | Path,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    out_dir: Path = Path("runs/feedback"),
) -> TrainReport:
    """Real-vs-regenerated token classification against a frozen inpainter."""
    splits = _resolve_corpus(corpus)
    if isinstance(inpainter, (str, Path)):
        inpainter = load_checkpoint(Path(inpainter).read_bytes(), "inpainter")
    elif isinstance(inpainter, bytes):
        inpainter = load_checkpoint(inpainter, "inpainter")
    model_config = model_config or ModelConfig(
        n_enc_layers=2, n_dec_layers=0, max_len=inpainter.config.max_len
    )
    model = FeedbackModel(model_config, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng(config.seed + 1)
    gen_rng = np.random.default_rng(config.seed + 3)
    loop = _Loop(model, config, out_dir, model.kind)

    def forge(x, m_u, m_s, forge_rng):
        """The inpainter rewrites the subset; labels mark what it touched."""
        x_masked = np.where(m_s, MASK_ID, x)
        x_hat = sample_fill(x_masked, m_s, inpainter, config.temperature, 1.0, forge_rng)
        labels = np.where(m_s, 0.0, 1.0).astype(np.float32)
        return x_hat, labels

    val_raw = _val_batches(splits, config, 2, config.seed + 2)
    val_batches = []
    val_gen_rng = np.random.default_rng(config.seed + 4)
    for x, m_u, m_s in val_raw:
        x_hat, labels = forge(x, m_u, m_s, val_gen_rng)
        val_batches.append((x_hat, m_u, labels))

    def val_bce() -> float:
        with ag.no_grad():
            total = 0.0
            for x_hat, m_u, labels in val_batches:
                logits = model.forward(x_hat, m_u)
                total += ag.bce_with_logits(logits, labels, m_u).item()
        return total / len(val_batches)

    stopped = False
    for step_i in range(config.steps):
        x = _sample_batch(splits[corpus_mod.TRAIN], config, rng)
        m_u, m_s = _sample_masks(config, rng)
        x_hat, labels = forge(x, m_u, m_s, gen_rng)
        logits = model.forward(x_hat, m_u, rng=drop_rng, train=True)
        loop.step(ag.bce_with_logits(logits, labels, m_u))
        loop.maybe_checkpoint()
        if (step_i + 1) % config.eval_every == 0 and loop.should_stop(val_bce()):
            stopped = True
            break
    return loop.finish({"val_bce": val_bce()}, stopped)


def train_evaluator(
    corpus,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    out_dir: Path = Path("runs/evaluator"),
) -> TrainReport:
    """Plain next-token language modelling over full windows."""
    splits = _resolve_corpus(corpus)
    model_config = model_config or ModelConfig(
        n_enc_layers=0, n_dec_layers=4, max_len=config.window_len
    )
    model = EvaluatorModel(model_config, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng(config.seed + 1)
    loop = _Loop(model, config, out_dir, model.kind)

    val_rng = np.random.default_rng(config.seed + 2)
    seqs_val = splits.get(corpus_mod.VAL) or splits[corpus_mod.TRAIN]
    val_batches = [_sample_batch(seqs_val, config, val_rng) for _ in range(4)]

    def val_nll() -> float:
        with ag.no_grad():
            total = 0.0
            for x in val_batches:
                logits = model.forward(x[:, :-1])
                total += ag.cross_entropy(logits, x[:, 1:]).item()
        return total / len(val_batches)

    stopped = False
    for step_i in range(config.steps):
        x = _sample_batch(splits[corpus_mod.TRAIN], config, rng)
        logits = model.forward(x[:, :-1], rng=drop_rng, train=True)
        loop.step(ag.cross_entropy(logits, x[:, 1:]))
        loop.maybe_checkpoint()
        if (step_i + 1) % config.eval_every == 0 and loop.should_stop(val_nll()):
            stopped = True
            break
    return loop.finish({"val_nll": val_nll()}, stopped)
