"""Adversarial training loops over the embedding space.

Six regimes share one FreeLB-style inner loop:

  baseline    plain cross-entropy minimization
  adv         one untied perturbation matrix per sample, whole-matrix
              Frobenius ball, normalized gradient ascent
  space       per-identifier perturbations, tied across occurrences,
              per-identifier Frobenius balls, keyword rows always zero
  rand_adv    Gaussian perturbations on all positions, projected, no ascent
  rand_space  Gaussian perturbations tied per identifier, projected
  augment     actual code-transformation variants instead of perturbations

Each minibatch runs K ascent passes. The parameter gradient is accumulated
as the mean over passes of the mean over the batch; perturbations are
re-initialized to zero at every minibatch, ascended between passes, and
projected back onto their epsilon balls. The accumulated gradient feeds an
Adam update.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, asdict, field, replace

import numpy as np

from . import tensor as T
from .alignment import IdentifierMap
from .model import EncoderConfig, EncoderParams, forward_batch, init_params, loss_batch, pad_batch
from .seeding import derive_rng, stream_key
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

MODES = ("baseline", "adv", "space", "rand_adv", "rand_space", "augment")
ASCENT_MODES = ("adv", "space")
ZERO_GRAD_EPS = 1e-12   # skip threshold on ||g_adv||_F
_BALL_SLACK = 1e-6      # float32 headroom when deciding "already inside"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "baseline"
    epsilon: float = 1.0       # Frobenius perturbation bound
    eta: float = 0.35          # adversarial (inner ascent) learning rate
    steps: int = 3             # K, inner ascent passes per minibatch
    alpha: float = 1.5e-3      # parameter learning rate
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    position_jitter: bool = True  # random positional-window offset per minibatch

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.mode in ASCENT_MODES and self.eta <= 0:
            raise ValueError("eta must be > 0 for ascent modes")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class EncodedSample:
    """One training unit: sub-word ids, identifier alignment, gold label."""
    ids: np.ndarray
    idmap: IdentifierMap
    label: int
    sample_id: object = 0
    variants: list | None = None   # augment mode: K encoded variants, slot 0 = self

    @property
    def n(self) -> int:
        return int(self.ids.shape[0])


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------

def project(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Project onto the Frobenius ball of radius epsilon; idempotent."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0.0:
        return np.zeros_like(delta)
    norm = float(np.linalg.norm(delta.astype(np.float64)))
    if norm <= epsilon + _BALL_SLACK:
        return delta
    return (delta * np.asarray(epsilon / norm, dtype=delta.dtype)).astype(delta.dtype)


def ascent_step(delta: np.ndarray, g_adv: np.ndarray, eta: float,
                epsilon: float) -> np.ndarray:
    """Normalized gradient ascent followed by ball projection.

    Steps of fixed length eta in the direction g/||g||_F; a vanishing
    gradient (norm < 1e-12) leaves delta unchanged.
    """
    norm = float(np.linalg.norm(g_adv.astype(np.float64)))
    if norm < ZERO_GRAD_EPS:
        return delta
    stepped = delta + (eta / norm) * g_adv
    return project(stepped.astype(delta.dtype), epsilon)


class PerturbationSet:
    """Per-identifier perturbation matrices for one sample.

    Matrices are leaf tensors so one backward pass yields every g_adv^i;
    `ascended` consumes those gradients and returns the next set.
    """

    def __init__(self, idmap: IdentifierMap, d: int, mats: dict | None = None,
                 dtype=np.float32):
        self.idmap = idmap
        self.d = d
        if mats is None:
            mats = {e.name: np.zeros((e.k, d), dtype=dtype) for e in idmap.entries}
        self.leaves = {name: Tensor(m, requires_grad=True) for name, m in mats.items()}

    @property
    def names(self) -> list:
        return [e.name for e in self.idmap.entries]

    def matrices(self) -> dict:
        return {name: leaf.data for name, leaf in self.leaves.items()}

    def ascended(self, eta: float, epsilon: float) -> "PerturbationSet":
        mats = {}
        for entry in self.idmap.entries:
            leaf = self.leaves[entry.name]
            if leaf.grad is None:
                mats[entry.name] = leaf.data
            else:
                mats[entry.name] = ascent_step(leaf.data, leaf.grad, eta, epsilon)
        return PerturbationSet(self.idmap, self.d, mats)

    @classmethod
    def random(cls, idmap: IdentifierMap, d: int, epsilon: float,
               rng: np.random.Generator, dtype=np.float32) -> "PerturbationSet":
        mats = {e.name: project(rng.standard_normal((e.k, d)).astype(dtype), epsilon)
                for e in idmap.entries}
        return cls(idmap, d, mats)


def scatter(perts: PerturbationSet, idmap: IdentifierMap, n: int, d: int) -> Tensor:
    """Spread per-identifier matrices over their occurrence rows.

    Row p gets delta_i[j] when p is the j-th sub-word of identifier i; all
    other rows are zero. Differentiable: the gradient for delta_i sums the
    output gradient over every occurrence of identifier i.
    """
    if perts.names != [e.name for e in idmap.entries]:
        raise ValueError("perturbation entries do not match the identifier map")
    leaves = [perts.leaves[e.name] for e in idmap.entries]
    data = np.zeros((n, d), dtype=np.float32 if not leaves else leaves[0].dtype)
    for entry, leaf in zip(idmap.entries, leaves):
        for p, q in entry.ranges():
            if q > n:
                raise ValueError(f"occurrence [{p},{q}) exceeds sequence length {n}")
            data[p:q] = leaf.data

    entries = idmap.entries

    def push(g):
        return tuple(
            sum(g[p:q] for p, q in entry.ranges())
            for entry in entries)

    return T._node(data, tuple(leaves), push, "scatter")


def scatter_batch(pert_sets: list, lengths, n_max: int, d: int) -> Tensor:
    """Batched scatter: one (B, n_max, d) delta from per-sample perturbation
    sets; padded rows stay zero."""
    leaves = []
    layout = []
    b = len(pert_sets)
    dtype = np.float32
    for row, perts in enumerate(pert_sets):
        for entry in perts.idmap.entries:
            leaf = perts.leaves[entry.name]
            dtype = leaf.dtype
            leaves.append(leaf)
            layout.append((row, entry.ranges()))
    data = np.zeros((b, n_max, d), dtype=dtype)
    for leaf, (row, ranges) in zip(leaves, layout):
        for p, q in ranges:
            data[row, p:q] = leaf.data

    def push(g):
        return tuple(
            sum(g[row, p:q] for p, q in ranges)
            for (row, ranges) in layout)

    return T._node(data, tuple(leaves), push, "scatter_batch")


class FullPerturbation:
    """Single untied (n, d) perturbation for vanilla embedding-space
    adversarial training; the ball spans the whole matrix, keywords included."""

    def __init__(self, n: int, d: int, data: np.ndarray | None = None, dtype=np.float32):
        self.n = n
        self.d = d
        self.leaf = Tensor(np.zeros((n, d), dtype=dtype) if data is None else data,
                           requires_grad=True)

    def ascended(self, eta: float, epsilon: float) -> "FullPerturbation":
        if self.leaf.grad is None:
            return FullPerturbation(self.n, self.d, self.leaf.data)
        return FullPerturbation(
            self.n, self.d, ascent_step(self.leaf.data, self.leaf.grad, eta, epsilon))

    @classmethod
    def random(cls, n: int, d: int, epsilon: float, rng: np.random.Generator,
               dtype=np.float32) -> "FullPerturbation":
        return cls(n, d, project(rng.standard_normal((n, d)).astype(dtype), epsilon))


def _stack_full(perts: list, lengths, n_max: int, d: int) -> Tensor:
    leaves = [p.leaf for p in perts]
    data = np.zeros((len(perts), n_max, d), dtype=leaves[0].dtype if leaves else np.float32)
    for row, leaf in enumerate(leaves):
        data[row, : leaf.shape[0]] = leaf.data

    def push(g):
        return tuple(g[row, : leaf.shape[0]] for row, leaf in enumerate(leaves))

    return T._node(data, tuple(leaves), push, "stack_full")


# ---------------------------------------------------------------------------
# minibatch gradient computations
# ---------------------------------------------------------------------------

@dataclass
class MinibatchResult:
    grads: dict                 # parameter name -> accumulated gradient g_K
    loss: float                 # mean loss over the K passes
    perturbations: list | None  # final per-sample perturbation state (modes with one)


def _mask_rng(cfg: TrainConfig, step_key) -> np.random.Generator:
    # one dropout stream per (minibatch, pass-independent): masks repeat
    # across the K passes so epsilon=0 reduces exactly to the clean gradient
    return derive_rng(cfg.seed, "dropout", *step_key)


def _position_offset(cfg: TrainConfig, step_key, n_max: int, max_len: int,
                     train: bool) -> int:
    """Per-minibatch positional window shift; mode-independent so paired runs
    stay comparable. Breaks reliance on absolute token positions."""
    if not (train and cfg.position_jitter):
        return 0
    room = max_len - n_max
    if room <= 0:
        return 0
    return int(derive_rng(cfg.seed, "positions", *step_key).integers(0, room + 1))


def _accumulate(params: EncoderParams, grads: dict, weight: float):
    for name, tensor in params.items():
        if tensor.grad is not None:
            acc = grads.get(name)
            contribution = tensor.grad * np.asarray(weight, dtype=tensor.dtype)
            grads[name] = contribution if acc is None else acc + contribution


def _finalize(grads: dict, params: EncoderParams) -> dict:
    for name, tensor in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(tensor.data)
    return grads


def _run_freelb(params: EncoderParams, batch: list, cfg: TrainConfig, step_key,
                make_perts, train: bool = True) -> MinibatchResult:
    """Shared K-pass loop. `make_perts(t, rng)` returns the pass-t
    perturbation state (or None) given the previous state."""
    ids, lengths = pad_batch([s.ids for s in batch])
    labels = np.asarray([s.label for s in batch], dtype=np.int64)
    n_max = ids.shape[1]
    d = params.config.d
    k = cfg.steps

    grads: dict = {}
    losses = []
    perts = None
    offset = _position_offset(cfg, step_key, n_max, params.config.max_len, train)
    for t in range(1, k + 1):
        perts = make_perts(t, perts)
        if perts is None:
            delta = None
        elif isinstance(perts[0] if perts else None, FullPerturbation):
            delta = _stack_full(perts, lengths, n_max, d)
        else:
            delta = scatter_batch(perts, lengths, n_max, d)
        params.zero_grad()
        logits = forward_batch(params, ids, lengths, delta, train=train,
                               rng=_mask_rng(cfg, step_key), pos_offset=offset)
        loss = loss_batch(logits, labels)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss in mode {cfg.mode!r} at step {step_key}")
        backward(loss)
        _accumulate(params, grads, 1.0 / k)
        losses.append(value)
        if perts is not None and cfg.mode in ASCENT_MODES:
            perts = [p.ascended(cfg.eta, cfg.epsilon) for p in perts]
    params.zero_grad()
    return MinibatchResult(_finalize(grads, params), float(np.mean(losses)), perts)


def baseline_minibatch(params: EncoderParams, batch: list, cfg: TrainConfig,
                       step_key=(0, 0), train: bool = True) -> MinibatchResult:
    """Clean-gradient minibatch (no perturbations, single pass)."""
    one_pass = replace(cfg, mode="baseline", steps=1) if cfg.steps != 1 or cfg.mode != "baseline" \
        else cfg
    return _run_freelb(params, batch, one_pass, step_key, lambda t, prev: None, train)


def space_minibatch(params: EncoderParams, batch: list, cfg: TrainConfig,
                    step_key=(0, 0), train: bool = True) -> MinibatchResult:
    """Tied per-identifier adversarial training (the headline regime).

    Per sample and identifier i, delta_i in R^(k_i x d) starts at zero, is
    scattered to every occurrence, ascended along its own loss gradient
    after each pass, and projected onto its own epsilon ball. Non-identifier
    rows of the scattered matrix are structurally zero.
    """
    if cfg.mode != "space":
        raise ValueError(f"space_minibatch called with mode {cfg.mode!r}")
    d = params.config.d

    def make(t, prev):
        if t == 1:
            return [PerturbationSet(s.idmap, d) for s in batch]
        return prev  # ascended in the shared loop

    return _run_freelb(params, batch, cfg, step_key, make, train)


def adv_minibatch(params: EncoderParams, batch: list, cfg: TrainConfig,
                  step_key=(0, 0), train: bool = True) -> MinibatchResult:
    """Vanilla embedding-space adversarial training: one untied (n, d)
    perturbation per sample, whole-matrix Frobenius ball."""
    if cfg.mode != "adv":
        raise ValueError(f"adv_minibatch called with mode {cfg.mode!r}")
    d = params.config.d

    def make(t, prev):
        if t == 1:
            return [FullPerturbation(s.n, d) for s in batch]
        return prev

    return _run_freelb(params, batch, cfg, step_key, make, train)


def random_perturb_minibatch(params: EncoderParams, batch: list, cfg: TrainConfig,
                             step_key=(0, 0), train: bool = True) -> MinibatchResult:
    """Ablations: K passes with projected Gaussian perturbations, gradients
    averaged. rand_space ties draws per identifier; rand_adv perturbs every
    position of the sample."""
    if cfg.mode not in ("rand_adv", "rand_space"):
        raise ValueError(f"random_perturb_minibatch called with mode {cfg.mode!r}")
    d = params.config.d

    def make(t, prev):
        rng = derive_rng(cfg.seed, "perturb", *step_key, t)
        if cfg.mode == "rand_space":
            return [PerturbationSet.random(s.idmap, d, cfg.epsilon, rng) for s in batch]
        return [FullPerturbation.random(s.n, d, cfg.epsilon, rng) for s in batch]

    return _run_freelb(params, batch, cfg, step_key, make, train)


def augment_minibatch(params: EncoderParams, batch: list, cfg: TrainConfig,
                      step_key=(0, 0), train: bool = True) -> MinibatchResult:
    """Actual data augmentation: pass t trains on transformation variant t
    of every sample (variant 1 is the original); gradients are averaged."""
    if cfg.mode != "augment":
        raise ValueError(f"augment_minibatch called with mode {cfg.mode!r}")
    k = cfg.steps
    grads: dict = {}
    losses = []
    for t in range(k):
        view = []
        for s in batch:
            variants = s.variants or [s]
            view.append(variants[t] if t < len(variants) else s)
        ids, lengths = pad_batch([s.ids for s in view])
        labels = np.asarray([s.label for s in view], dtype=np.int64)
        params.zero_grad()
        # slot 0 is the original sample; keep its mask stream aligned with
        # the baseline so K=1 reduces to the plain minibatch exactly
        rng = _mask_rng(cfg, step_key) if t == 0 else _mask_rng(cfg, (*step_key, "aug", t))
        offset = _position_offset(cfg, step_key if t == 0 else (*step_key, "aug", t),
                                  int(ids.shape[1]), params.config.max_len, train)
        logits = forward_batch(params, ids, lengths, train=train, rng=rng,
                               pos_offset=offset)
        loss = loss_batch(logits, labels)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss in mode 'augment' at step {step_key}")
        backward(loss)
        _accumulate(params, grads, 1.0 / k)
        losses.append(value)
    params.zero_grad()
    return MinibatchResult(_finalize(grads, params), float(np.mean(losses)), None)


_MINIBATCH = {
    "baseline": baseline_minibatch,
    "adv": adv_minibatch,
    "space": space_minibatch,
    "rand_adv": random_perturb_minibatch,
    "rand_space": random_perturb_minibatch,
    "augment": augment_minibatch,
}


def minibatch_gradient(params: EncoderParams, batch: list, cfg: TrainConfig,
                       step_key=(0, 0), train: bool = True) -> MinibatchResult:
    return _MINIBATCH[cfg.mode](params, batch, cfg, step_key, train)


# ---------------------------------------------------------------------------
# optimizer and outer loop
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: EncoderParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, params: EncoderParams, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        lr_t = self.lr * correction
        for name, tensor in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            tensor.data -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(tensor.dtype)


class Sgd:
    def __init__(self, params: EncoderParams, lr: float):
        self.lr = lr

    def step(self, params: EncoderParams, grads: dict):
        for name, tensor in params.items():
            tensor.data -= (self.lr * grads[name]).astype(tensor.dtype)


def _make_optimizer(cfg: TrainConfig, params: EncoderParams):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.alpha)
    if cfg.optimizer == "sgd":
        return Sgd(params, cfg.alpha)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def length_grouped_batches(samples: list, batch_size: int) -> list:
    """Group indexes of similar-length samples; order is deterministic."""
    order = sorted(range(len(samples)), key=lambda i: (samples[i].n, i))
    return [order[i: i + batch_size] for i in range(0, len(order), batch_size)]


def evaluate_accuracy(params: EncoderParams, samples: list, batch_size: int = 64) -> float:
    if not samples:
        return 0.0
    correct = 0
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start: start + batch_size]
            ids, lengths = pad_batch([s.ids for s in chunk])
            logits = forward_batch(params, ids, lengths)
            pred = logits.data.argmax(axis=-1)
            correct += int((pred == np.asarray([s.label for s in chunk])).sum())
    return correct / len(samples)


def train(cfg: TrainConfig, train_set: list, dev_set: list,
          encoder_config: EncoderConfig, *, params: EncoderParams | None = None,
          metrics_path=None) -> tuple:
    """Run cfg.epochs of minibatch training; returns (best_params, history).

    Minibatches group samples of similar length and are visited in a
    seed-derived shuffled order each epoch. The checkpoint with the best dev
    accuracy wins; with zero epochs the initial parameters are returned.
    """
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be nonempty")
    if params is None:
        params = init_params(encoder_config, seed=stream_key(cfg.seed, "init") % (2 ** 32))

    optimizer = _make_optimizer(cfg, params)
    batches = length_grouped_batches(train_set, cfg.batch_size)
    history = []
    best_params = params.copy()
    best_acc = -1.0

    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            started = time.perf_counter()
            order = derive_rng(cfg.seed, "batch-order", epoch).permutation(len(batches))
            epoch_losses = []
            for position, batch_index in enumerate(order):
                batch = [train_set[i] for i in batches[batch_index]]
                try:
                    result = minibatch_gradient(params, batch, cfg,
                                                step_key=(epoch, int(batch_index)))
                except TrainingError as exc:
                    raise TrainingError(
                        f"{exc} (epoch {epoch}, batch {position})") from exc
                optimizer.step(params, result.grads)
                epoch_losses.append(result.loss)
            dev_acc = evaluate_accuracy(params, dev_set)
            record = {
                "epoch": epoch,
                "mode": cfg.mode,
                "train_loss": float(np.mean(epoch_losses)),
                "dev_acc": dev_acc,
                "wall_ms": round((time.perf_counter() - started) * 1000.0, 3),
            }
            history.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            log.info("epoch %d (%s): loss %.4f dev_acc %.4f",
                     epoch, cfg.mode, record["train_loss"], dev_acc)
            if dev_acc > best_acc:
                best_acc = dev_acc
                best_params = params.copy()
    finally:
        if sink:
            sink.close()
    return best_params, history
