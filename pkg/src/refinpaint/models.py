"""The three networks: encoder-decoder inpainter, encoder-only feedback
classifier, and the autoregressive evaluator.

The inpainter follows the aligned seq2seq design: an anti-causal encoder
(position i sees i and later) over the masked input plus a binary channel
marking the positions to regenerate, a causal decoder over the right-shifted
target, and identity cross-attention so decoder position i reads exactly
encoder position i.  Together the decoder sees the past through itself and
the future through the encoder.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .errors import ShapeMismatch
from .remi import BOS_ID, VOCAB


class LengthMismatch(ValueError):
    pass


class SequenceTooLong(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class ChecksumFailure(ValueError):
    pass


class VocabMismatch(ValueError):
    pass


class AttentionMaskKind(Enum):
    ANTI_CAUSAL = "anti_causal"
    CAUSAL = "causal"
    IDENTITY = "identity"


def build_attention_mask(kind: AttentionMaskKind, n: int) -> np.ndarray:
    """Boolean allow-matrix: entry (i, j) is True when i may attend to j."""
    if n < 1:
        raise ShapeMismatch(f"n {n} < 1")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    if kind is AttentionMaskKind.CAUSAL:
        return j <= i
    if kind is AttentionMaskKind.ANTI_CAUSAL:
        return j >= i
    return j == i


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    max_len: int = 256
    dropout_p: float = 0.1
    vocab_size: int = len(VOCAB)

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ShapeMismatch(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def _normal(rng, shape, dtype, scale=0.02):
    return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _init_attn(params, prefix, d, rng, dtype):
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = _normal(rng, (d, d), dtype)
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{prefix}.{name}"] = _zeros((d,), dtype)


def _init_block(params, prefix, d, rng, dtype, cross: bool):
    params[f"{prefix}.ln1.g"] = _ones((d,), dtype)
    params[f"{prefix}.ln1.b"] = _zeros((d,), dtype)
    _init_attn(params, f"{prefix}.attn", d, rng, dtype)
    if cross:
        params[f"{prefix}.lnx.g"] = _ones((d,), dtype)
        params[f"{prefix}.lnx.b"] = _zeros((d,), dtype)
        _init_attn(params, f"{prefix}.cross", d, rng, dtype)
    params[f"{prefix}.ln2.g"] = _ones((d,), dtype)
    params[f"{prefix}.ln2.b"] = _zeros((d,), dtype)
    params[f"{prefix}.ffn.w1"] = _normal(rng, (d, 4 * d), dtype)
    params[f"{prefix}.ffn.b1"] = _zeros((4 * d,), dtype)
    params[f"{prefix}.ffn.w2"] = _normal(rng, (4 * d, d), dtype)
    params[f"{prefix}.ffn.b2"] = _zeros((d,), dtype)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, l, d = x.shape
    return ag.transpose(ag.reshape(x, (b, l, n_heads, d // n_heads)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    return ag.reshape(ag.transpose(x, 1, 2), (b, l, h * dh))


def _mha(params, prefix, query_src, kv_src, allow, cfg, rng, train):
    """Multi-head attention; `allow` is the [Lq, Lk] boolean mask."""
    q = _split_heads(ag.linear(query_src, params[f"{prefix}.wq"], params[f"{prefix}.bq"]), cfg.n_heads)
    k = _split_heads(ag.linear(kv_src, params[f"{prefix}.wk"], params[f"{prefix}.bk"]), cfg.n_heads)
    v = _split_heads(ag.linear(kv_src, params[f"{prefix}.wv"], params[f"{prefix}.bv"]), cfg.n_heads)
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(cfg.d_head))
    weights = ag.masked_softmax(scores, allow)
    out = _merge_heads(ag.matmul(weights, v))
    return ag.linear(out, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _block(params, prefix, x, allow, cfg, rng, train, enc=None, cross_allow=None):
    """Pre-LN transformer block: self-attention, optional cross, then FFN."""

    def drop(t):
        if train and cfg.dropout_p:
            return ag.dropout(t, cfg.dropout_p, rng, train)
        return t

    h = ag.layernorm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = ag.add(x, drop(_mha(params, f"{prefix}.attn", h, h, allow, cfg, rng, train)))
    if enc is not None:
        h = ag.layernorm(x, params[f"{prefix}.lnx.g"], params[f"{prefix}.lnx.b"])
        x = ag.add(x, drop(_mha(params, f"{prefix}.cross", h, enc, cross_allow, cfg, rng, train)))
    h = ag.layernorm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = ag.linear(h, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.b1"])
    h = ag.linear(ag.gelu(h), params[f"{prefix}.ffn.w2"], params[f"{prefix}.ffn.b2"])
    return ag.add(x, drop(h))


class _ModelBase:
    kind = "base"

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.vocab_checksum = VOCAB.checksum()
        self._build(np.random.default_rng(seed))

    def _build(self, rng) -> None:
        raise NotImplementedError

    def _check_len(self, length: int) -> None:
        if length > self.config.max_len:
            raise SequenceTooLong(f"{length} > max_len {self.config.max_len}")

    def _embed(self, ids: np.ndarray, bits: np.ndarray | None, rng, train) -> Tensor:
        b, l = ids.shape
        x = ag.embedding_lookup(self.params["tok_emb"], ids)
        x = ag.add(x, ag.embedding_lookup(self.params["pos_emb"], np.arange(l)))
        if bits is not None:
            x = ag.add(x, ag.embedding_lookup(self.params["chan_emb"], bits.astype(np.int64)))
        if train and self.config.dropout_p:
            x = ag.dropout(x, self.config.dropout_p, rng, train)
        return x

    def save(self) -> bytes:
        return save_checkpoint(self)


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ShapeMismatch(f"ids must be 1-D or 2-D, got {arr.shape}")


class InpaintingModel(_ModelBase):
    """Encoder-decoder network that rewrites the masked positions."""

    kind = "inpainter"

    def _build(self, rng) -> None:
        cfg, d, dt = self.config, self.config.d_model, self.dtype
        p = self.params
        p["tok_emb"] = _normal(rng, (cfg.vocab_size, d), dt)
        p["pos_emb"] = _normal(rng, (cfg.max_len, d), dt)
        p["chan_emb"] = _normal(rng, (2, d), dt)
        for i in range(cfg.n_enc_layers):
            _init_block(p, f"enc.{i}", d, rng, dt, cross=False)
        p["enc_ln.g"] = _ones((d,), dt)
        p["enc_ln.b"] = _zeros((d,), dt)
        for i in range(cfg.n_dec_layers):
            _init_block(p, f"dec.{i}", d, rng, dt, cross=True)
        p["dec_ln.g"] = _ones((d,), dt)
        p["dec_ln.b"] = _zeros((d,), dt)
        p["head.w"] = _normal(rng, (d, cfg.vocab_size), dt)
        p["head.b"] = _zeros((cfg.vocab_size,), dt)

    def encoder_states(self, x_masked, m_s, rng=None, train=False) -> Tensor:
        """Anti-causal encoder over the masked tokens plus the mask channel."""
        ids, _ = _as_batch(x_masked)
        bits = np.asarray(m_s)
        if bits.ndim == 1:
            bits = bits[None, :]
        if bits.shape != ids.shape:
            raise LengthMismatch(f"mask {bits.shape} vs ids {ids.shape}")
        self._check_len(ids.shape[1])
        allow = build_attention_mask(AttentionMaskKind.ANTI_CAUSAL, ids.shape[1])
        x = self._embed(ids, bits, rng, train)
        for i in range(self.config.n_enc_layers):
            x = _block(self.params, f"enc.{i}", x, allow, self.config, rng, train)
        return ag.layernorm(x, self.params["enc_ln.g"], self.params["enc_ln.b"])

    def forward(self, x_masked, m_s, decoder_input, rng=None, train=False) -> Tensor:
        """Per-position vocabulary logits, shape [B, L, V] (or [L, V])."""
        ids, squeeze = _as_batch(x_masked)
        dec_ids, _ = _as_batch(decoder_input)
        if dec_ids.shape != ids.shape:
            raise LengthMismatch(f"decoder input {dec_ids.shape} vs encoder {ids.shape}")
        enc = self.encoder_states(x_masked, m_s, rng, train)
        l = ids.shape[1]
        causal = build_attention_mask(AttentionMaskKind.CAUSAL, l)
        identity = build_attention_mask(AttentionMaskKind.IDENTITY, l)
        x = self._embed(dec_ids, None, rng, train)
        for i in range(self.config.n_dec_layers):
            x = _block(
                self.params, f"dec.{i}", x, causal, self.config, rng, train,
                enc=enc, cross_allow=identity,
            )
        x = ag.layernorm(x, self.params["dec_ln.g"], self.params["dec_ln.b"])
        logits = ag.linear(x, self.params["head.w"], self.params["head.b"])
        if squeeze:
            return ag.reshape(logits, logits.shape[1:])
        return logits

    # -- fast inference path -------------------------------------------------

    def encode_np(self, x_masked, m_s) -> np.ndarray:
        with no_grad():
            return self.encoder_states(x_masked, m_s).data

    def decoder_cache(self, batch: int) -> "DecoderCache":
        return DecoderCache(self, batch)


class DecoderCache:
    """Incremental decoder state for one left-to-right generation pass.

    Numerically identical to the training forward (checked by test): each
    step appends this position's keys/values and reads encoder state at the
    same index through the identity cross-attention.
    """

    def __init__(self, model: InpaintingModel, batch: int):
        cfg = model.config
        self.model = model
        self.t = 0
        shape = (batch, cfg.n_heads, cfg.max_len, cfg.d_head)
        self.k = [np.zeros(shape, dtype=model.dtype) for _ in range(cfg.n_dec_layers)]
        self.v = [np.zeros(shape, dtype=model.dtype) for _ in range(cfg.n_dec_layers)]

    def step(self, token_ids: np.ndarray, enc_states: np.ndarray) -> np.ndarray:
        """Feed the token at the current position; return logits [B, V]."""
        cfg = self.model.config
        p = {k: t.data for k, t in self.model.params.items()}
        t = self.t
        b = token_ids.shape[0]
        h, dh = cfg.n_heads, cfg.d_head

        def ln(x, g, bia):
            mu = x.mean(axis=-1, keepdims=True)
            var = x.var(axis=-1, keepdims=True)
            return (x - mu) / np.sqrt(var + 1e-5) * g + bia

        def heads(x):  # [B, D] -> [B, H, Dh]
            return x.reshape(b, h, dh)

        x = p["tok_emb"][token_ids] + p["pos_emb"][t]
        for i in range(cfg.n_dec_layers):
            pre = f"dec.{i}"
            hx = ln(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            q = heads(hx @ p[f"{pre}.attn.wq"] + p[f"{pre}.attn.bq"])
            self.k[i][:, :, t] = heads(hx @ p[f"{pre}.attn.wk"] + p[f"{pre}.attn.bk"])
            self.v[i][:, :, t] = heads(hx @ p[f"{pre}.attn.wv"] + p[f"{pre}.attn.bv"])
            keys = self.k[i][:, :, : t + 1]
            vals = self.v[i][:, :, : t + 1]
            scores = np.einsum("bhd,bhtd->bht", q, keys) * (1.0 / math.sqrt(dh))
            scores -= scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=-1, keepdims=True)
            ctx = np.einsum("bht,bhtd->bhd", w, vals).reshape(b, h * dh)
            x = x + ctx @ p[f"{pre}.attn.wo"] + p[f"{pre}.attn.bo"]

            # Identity cross-attention: one allowed position, weight exactly 1.
            enc_t = enc_states[:, t]
            ctx = (enc_t @ p[f"{pre}.cross.wv"] + p[f"{pre}.cross.bv"])
            x = x + ctx @ p[f"{pre}.cross.wo"] + p[f"{pre}.cross.bo"]

            hx = ln(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            hx = hx @ p[f"{pre}.ffn.w1"] + p[f"{pre}.ffn.b1"]
            inner = ag._GELU_C * (hx + 0.044715 * hx**3)
            hx = 0.5 * hx * (1.0 + np.tanh(inner))
            x = x + hx @ p[f"{pre}.ffn.w2"] + p[f"{pre}.ffn.b2"]

        x = ln(x, p["dec_ln.g"], p["dec_ln.b"])
        self.t += 1
        return x @ p["head.w"] + p["head.b"]


class FeedbackModel(_ModelBase):
    """Encoder-only classifier scoring each token as real or regenerated."""

    kind = "feedback"

    def _build(self, rng) -> None:
        cfg, d, dt = self.config, self.config.d_model, self.dtype
        p = self.params
        p["tok_emb"] = _normal(rng, (cfg.vocab_size, d), dt)
        p["pos_emb"] = _normal(rng, (cfg.max_len, d), dt)
        p["chan_emb"] = _normal(rng, (2, d), dt)
        for i in range(cfg.n_enc_layers):
            _init_block(p, f"enc.{i}", d, rng, dt, cross=False)
        p["enc_ln.g"] = _ones((d,), dt)
        p["enc_ln.b"] = _zeros((d,), dt)
        # Zero head: an untrained model reports P(real) = 0.5 everywhere.
        p["head.w"] = _zeros((d, 1), dt)
        p["head.b"] = _zeros((1,), dt)

    def forward(self, x_hat, m_u, rng=None, train=False) -> Tensor:
        """Per-position realism logits, shape [B, L] (or [L])."""
        ids, squeeze = _as_batch(x_hat)
        bits = np.asarray(m_u)
        if bits.ndim == 1:
            bits = bits[None, :]
        if bits.shape != ids.shape:
            raise LengthMismatch(f"mask {bits.shape} vs ids {ids.shape}")
        self._check_len(ids.shape[1])
        b, l = ids.shape
        allow = np.ones((l, l), dtype=bool)  # fully bidirectional
        x = self._embed(ids, bits, rng, train)
        for i in range(self.config.n_enc_layers):
            x = _block(self.params, f"enc.{i}", x, allow, self.config, rng, train)
        x = ag.layernorm(x, self.params["enc_ln.g"], self.params["enc_ln.b"])
        logits = ag.reshape(ag.linear(x, self.params["head.w"], self.params["head.b"]), (b, l))
        if squeeze:
            return ag.reshape(logits, (l,))
        return logits


class EvaluatorModel(_ModelBase):
    """Causal decoder-only language model; position i predicts token i+1."""

    kind = "evaluator"

    def _build(self, rng) -> None:
        cfg, d, dt = self.config, self.config.d_model, self.dtype
        p = self.params
        p["tok_emb"] = _normal(rng, (cfg.vocab_size, d), dt)
        p["pos_emb"] = _normal(rng, (cfg.max_len, d), dt)
        for i in range(cfg.n_dec_layers):
            _init_block(p, f"dec.{i}", d, rng, dt, cross=False)
        p["dec_ln.g"] = _ones((d,), dt)
        p["dec_ln.b"] = _zeros((d,), dt)
        p["head.w"] = _normal(rng, (d, cfg.vocab_size), dt)
        p["head.b"] = _zeros((cfg.vocab_size,), dt)

    def forward(self, x, rng=None, train=False) -> Tensor:
        ids, squeeze = _as_batch(x)
        self._check_len(ids.shape[1])
        l = ids.shape[1]
        allow = build_attention_mask(AttentionMaskKind.CAUSAL, l)
        h = self._embed(ids, None, rng, train)
        for i in range(self.config.n_dec_layers):
            h = _block(self.params, f"dec.{i}", h, allow, self.config, rng, train)
        h = ag.layernorm(h, self.params["dec_ln.g"], self.params["dec_ln.b"])
        logits = ag.linear(h, self.params["head.w"], self.params["head.b"])
        if squeeze:
            return ag.reshape(logits, logits.shape[1:])
        return logits


MODEL_KINDS = {
    InpaintingModel.kind: InpaintingModel,
    FeedbackModel.kind: FeedbackModel,
    EvaluatorModel.kind: EvaluatorModel,
}

CHECKPOINT_FORMAT_VERSION = 1
_DTYPE_CODES = {"<f4": 1, "<f8": 2}
_DTYPE_BY_CODE = {1: "<f4", 2: "<f8"}


def save_checkpoint(model: _ModelBase) -> bytes:
    """Header JSON + named little-endian blobs + sha256 trailer."""
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_kind": model.kind,
        "config": asdict(model.config),
        "vocab_checksum": model.vocab_checksum,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = bytearray()
    body += struct.pack("<I", len(model.params))
    for name in sorted(model.params):
        data = model.params[name].data
        dtype = np.dtype(data.dtype).newbyteorder("<")
        raw = np.ascontiguousarray(data.astype(dtype, copy=False)).tobytes()
        name_b = name.encode()
        body += struct.pack("<H", len(name_b)) + name_b
        body += struct.pack("<B", data.ndim)
        body += struct.pack(f"<{data.ndim}I", *data.shape)
        body += struct.pack("<B", _DTYPE_CODES[dtype.str])
        body += struct.pack("<Q", len(raw)) + raw
    digest = hashlib.sha256(bytes(body)).digest()
    return struct.pack("<I", len(header_bytes)) + header_bytes + bytes(body) + digest


def load_checkpoint(data: bytes, expected_kind: str | None = None) -> _ModelBase:
    """Rebuild a model from checkpoint bytes, verifying integrity."""
    try:
        header_len = struct.unpack("<I", data[:4])[0]
        header = json.loads(data[4 : 4 + header_len])
    except Exception as exc:
        raise ChecksumFailure(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise VersionMismatch(f"format_version {header.get('format_version')}")
    kind = header.get("model_kind")
    if kind not in MODEL_KINDS:
        raise VersionMismatch(f"unknown model_kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise VersionMismatch(f"model_kind {kind!r}, expected {expected_kind!r}")
    if header.get("vocab_checksum") != VOCAB.checksum():
        raise VocabMismatch("checkpoint was built against a different vocabulary")

    body = data[4 + header_len : -32]
    digest = data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumFailure("blob checksum does not match")

    pos = 0
    (n_params,) = struct.unpack_from("<I", body, pos)
    pos += 4
    blobs: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        (code,) = struct.unpack_from("<B", body, pos)
        pos += 1
        (nbytes,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        arr = np.frombuffer(body[pos : pos + nbytes], dtype=_DTYPE_BY_CODE[code])
        pos += nbytes
        blobs[name] = arr.reshape(shape).copy()

    config = ModelConfig(**header["config"])
    model = MODEL_KINDS[kind](config, seed=0, dtype=blobs[next(iter(blobs))].dtype)
    if set(blobs) != set(model.params):
        raise ChecksumFailure("parameter names do not match the architecture")
    for name, arr in blobs.items():
        if model.params[name].data.shape != arr.shape:
            raise ChecksumFailure(f"parameter {name} has shape {arr.shape}")
        model.params[name].data = arr
    return model
