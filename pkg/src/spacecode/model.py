"""Transformer encoder classifier with an additive-perturbation hook.

BERT-style post-norm layout: token plus learned positional embeddings (plus
an optional perturbation matrix), embedding layer-norm, L encoder layers,
then a linear classifier over the position-0 sentinel state. The
perturbation is injected before the embedding layer-norm, as part of the
embedding sum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .bpe import SubwordSeq
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d: int = 64
    layers: int = 2
    heads: int = 4
    d_ff: int = 256
    max_len: int = 256
    classes: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def param_shapes(config: EncoderConfig) -> dict:
    """Canonical parameter names and shapes, in initialization order."""
    d, ff, c = config.d, config.d_ff, config.classes
    shapes = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_len, d),
        "emb_ln_g": (d,),
        "emb_ln_b": (d,),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        shapes.update({
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "w1": (ff, d), p + "b1": (ff,),
            p + "w2": (d, ff), p + "b2": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
        })
    shapes["cls_w"] = (c, d)
    shapes["cls_b"] = (c,)
    return shapes


class EncoderParams:
    """Named parameter tensors; single-writer during training."""

    def __init__(self, tensors: dict, config: EncoderConfig):
        self.tensors = tensors
        self.config = config

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()},
            self.config)

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(
            {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.tensors.items()},
            self.config)

    def n_values(self) -> int:
        return sum(int(np.prod(t.shape)) for t in self.tensors.values())


def init_params(config: EncoderConfig, seed: int, dtype=np.float32) -> EncoderParams:
    """Truncated-normal weights (std 0.02, clipped at two sigma), identity
    layer-norm affines, zero biases. Deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            values = np.ones(shape, dtype=dtype)
        elif leaf.endswith("_b") or leaf.startswith("b"):
            values = np.zeros(shape, dtype=dtype)
        else:
            values = np.clip(rng.normal(0.0, 0.02, size=shape), -0.04, 0.04).astype(dtype)
        tensors[name] = Tensor(values, requires_grad=True)
    return EncoderParams(tensors, config)


def _pool_first(h: Tensor) -> Tensor:
    """Hidden state of position 0: (B, n, d) -> (B, d)."""
    out = h.data[:, 0, :]

    def push(g):
        gh = np.zeros_like(h.data)
        gh[:, 0, :] = g
        return (gh,)

    return T._node(out, (h,), push, "pool_first")


def _attention(params, prefix: str, x: Tensor, config: EncoderConfig,
               key_mask: np.ndarray | None) -> Tensor:
    b, n, d = x.shape
    heads = config.heads
    dh = d // heads

    flat = T.reshape(x, (b * n, d))
    # fold the 1/sqrt(dh) score scaling into q
    q = T.scale(T.linear(flat, params[prefix + "wq"], params[prefix + "bq"]),
                1.0 / np.sqrt(dh))
    k = T.linear(flat, params[prefix + "wk"], params[prefix + "bk"])
    v = T.linear(flat, params[prefix + "wv"], params[prefix + "bv"])

    def split_heads(t):
        return T.transpose(T.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q, k, v = split_heads(q), split_heads(k), split_heads(v)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2)))
    probs = T.softmax_lastdim(scores, mask=key_mask)
    ctx = T.matmul(probs, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b * n, d))
    out = T.linear(ctx, params[prefix + "wo"], params[prefix + "bo"])
    return T.reshape(out, (b, n, d))


def forward_batch(params: EncoderParams, ids: np.ndarray, lengths,
                  delta: Tensor | None = None, *, train: bool = False,
                  rng: np.random.Generator | None = None,
                  pos_offset: int = 0) -> Tensor:
    """Logits (B, C) for a padded id batch (B, n).

    `delta` is an optional (B, n, d) additive perturbation on the embedding
    sum. Padded key positions are masked out of attention; position 0 of
    each row must be the classification sentinel. `pos_offset` shifts the
    positional-table window (training-time jitter; evaluation uses 0).
    """
    config = params.config
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise T.ShapeError(f"forward_batch: ids must be (B, n), got {ids.shape}")
    b, n = ids.shape
    if n + pos_offset > config.max_len:
        raise T.ShapeError(
            f"sequence length {n} (+offset {pos_offset}) exceeds max_len {config.max_len}")
    if delta is not None and delta.shape != (b, n, config.d):
        raise T.ShapeError(
            f"delta shape {delta.shape} does not match embeddings {(b, n, config.d)}")
    if train and config.dropout > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")

    lengths = np.asarray(lengths)
    x = T.embedding_gather(params["tok_emb"], ids)
    x = T.add(x, T.embedding_gather(params["pos_emb"], np.arange(pos_offset, pos_offset + n)))
    if delta is not None:
        x = T.add(x, delta)
    x = T.layer_norm_affine(x, params["emb_ln_g"], params["emb_ln_b"])

    p = config.dropout if train else 0.0
    if p > 0.0:
        x = T.dropout(x, p, rng)

    key_mask = None
    if (lengths < n).any():
        key_mask = np.zeros((b, 1, 1, n), dtype=x.dtype)
        key_mask[np.arange(n)[None, None, None, :] >= lengths[:, None, None, None]] = -1e9

    for i in range(config.layers):
        prefix = f"layer{i}."
        a = _attention(params, prefix, x, config, key_mask)
        if p > 0.0:
            a = T.dropout(a, p, rng)
        x = T.layer_norm_affine(T.add(x, a), params[prefix + "ln1_g"], params[prefix + "ln1_b"])
        flat = T.reshape(x, (b * n, config.d))
        f = T.linear(T.gelu(T.linear(flat, params[prefix + "w1"], params[prefix + "b1"])),
                     params[prefix + "w2"], params[prefix + "b2"])
        f = T.reshape(f, (b, n, config.d))
        if p > 0.0:
            f = T.dropout(f, p, rng)
        x = T.layer_norm_affine(T.add(x, f), params[prefix + "ln2_g"], params[prefix + "ln2_b"])

    pooled = _pool_first(x)
    return T.linear(pooled, params["cls_w"], params["cls_b"])


def forward(params: EncoderParams, ids, delta: Tensor | None = None, *,
            train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Logits (C,) for one sequence; `delta` is (n, d) or absent (== zeros)."""
    raw = ids.ids if isinstance(ids, SubwordSeq) else np.asarray(ids)
    n = raw.shape[0]
    if delta is not None:
        if delta.shape != (n, params.config.d):
            raise T.ShapeError(
                f"delta shape {delta.shape} does not match embeddings {(n, params.config.d)}")
        delta = T.reshape(delta, (1, n, params.config.d))
    logits = forward_batch(params, raw[None, :], np.array([n]), delta,
                           train=train, rng=rng)
    return T.reshape(logits, (params.config.classes,))


def loss(logits: Tensor, label) -> Tensor:
    """Softmax cross-entropy against an integer class index."""
    return T.cross_entropy_with_logits(logits, label)


def loss_batch(logits: Tensor, labels) -> Tensor:
    return T.cross_entropy_with_logits(logits, labels)


def predict_proba_batch(params: EncoderParams, ids: np.ndarray, lengths) -> np.ndarray:
    """Class probabilities (B, C) without building a graph."""
    with T.no_grad():
        logits = forward_batch(params, ids, lengths)
        probs = T.softmax_lastdim(logits)
    return probs.data


def pad_batch(seqs: list, pad_id: int = 0) -> tuple:
    """Stack variable-length id arrays into (B, n_max) plus a length vector."""
    arrays = [s.ids if isinstance(s, SubwordSeq) else np.asarray(s) for s in seqs]
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    n_max = int(lengths.max())
    out = np.full((len(arrays), n_max), pad_id, dtype=np.int32)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out, lengths
