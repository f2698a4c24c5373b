"""Softmax linear probes: init, forward, loss/gradient, training, metrics."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels

LOG_CLAMP = 1e-12
HEAD_MAGIC = b"CSLH"
_HEAD_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True, eq=False)
class LinearHead:
    """``C x D`` weights and length-``C`` bias.

    Parameters are held as float64 arrays of float32-representable values so
    that the float32 head file round-trips exactly.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"inconsistent head shapes {w.shape} / {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("head parameters must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def to_bytes(self) -> bytes:
        return (_HEAD_HEADER.pack(HEAD_MAGIC, self.class_count, self.feature_dim)
                + self.weights.astype("<f4").tobytes() + self.bias.astype("<f4").tobytes())

    def equals(self, other: "LinearHead") -> bool:
        return (self.weights.shape == other.weights.shape
                and self.weights.tobytes() == other.weights.tobytes()
                and self.bias.tobytes() == other.bias.tobytes())


def _round32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def save_head(head: LinearHead, path) -> None:
    Path(path).write_bytes(head.to_bytes())


def head_from_bytes(raw: bytes) -> LinearHead:
    if len(raw) < _HEAD_HEADER.size:
        raise ValueError("head file shorter than header")
    magic, c, d = _HEAD_HEADER.unpack_from(raw)
    if magic != HEAD_MAGIC:
        raise ValueError(f"bad head magic {magic!r}")
    if len(raw) != _HEAD_HEADER.size + 4 * (c * d + c):
        raise ValueError(f"head file size does not match C={c} D={d}")
    off = _HEAD_HEADER.size
    w = np.frombuffer(raw, dtype="<f4", count=c * d, offset=off).reshape(c, d)
    b = np.frombuffer(raw, dtype="<f4", count=c, offset=off + 4 * c * d)
    return LinearHead(w.astype(np.float64), b.astype(np.float64))


def load_head(path) -> LinearHead:
    return head_from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    label_mode: str = "hard"
    soft_temperature: float = 1.0
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.label_mode not in ("hard", "soft"):
            raise ValueError(f"label_mode must be 'hard' or 'soft', got {self.label_mode!r}")
        if not self.soft_temperature > 0:
            raise ValueError("soft_temperature must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")


@dataclass(frozen=True, eq=False)
class Predictions:
    logits: np.ndarray
    probs: np.ndarray

    @property
    def top1(self) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class id on ties
        return np.argmax(self.probs, axis=1)

    def __len__(self):
        return self.probs.shape[0]

    def subset(self, positions) -> "Predictions":
        return Predictions(self.logits[positions], self.probs[positions])


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_head(class_count: int, feature_dim: int, seed: int) -> LinearHead:
    if class_count < 2 or feature_dim < 1:
        raise ValueError(f"need C >= 2 and D >= 1, got C={class_count} D={feature_dim}")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(class_count, feature_dim)) / math.sqrt(feature_dim)
    return LinearHead(_round32(w), np.zeros(class_count))


def _features(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"feature batch of shape {x.shape} does not match head dim {dim}")
    return x


def forward(head: LinearHead, features, temperature: float = 1.0) -> Predictions:
    x = _features(features, head.feature_dim)
    logits = x @ head.weights.T + head.bias
    return Predictions(logits, softmax(logits, temperature))


def as_targets(targets, class_count: int, tol: float = 1e-6) -> np.ndarray:
    """Dense ``n x C`` float64 target matrix from hard ids or soft rows."""
    t = np.asarray(targets)
    if t.ndim == 1:
        if t.size and (t.min() < 0 or t.max() >= class_count):
            raise ValueError("hard target outside [0, C)")
        out = np.zeros((t.shape[0], class_count))
        out[np.arange(t.shape[0]), t.astype(np.int64)] = 1.0
        return out
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.shape[1] != class_count:
        raise ValueError(f"soft targets of shape {t.shape} do not match C={class_count}")
    if (t < -tol).any() or (np.abs(t.sum(axis=1) - 1.0) > tol).any():
        raise ValueError("soft targets must lie on the probability simplex")
    return t


class HeadGrad(NamedTuple):
    weights: np.ndarray
    bias: np.ndarray


def loss_and_grad(head: LinearHead, features, targets) -> tuple[float, HeadGrad]:
    """Mean cross-entropy and its analytic gradient, as a head-shaped pair."""
    x = _features(features, head.feature_dim)
    t = as_targets(targets, head.class_count)
    if t.shape[0] != x.shape[0]:
        raise ValueError("targets and features differ in batch size")
    z = x @ head.weights.T + head.bias
    m = z.max(axis=1, keepdims=True)
    logp = z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    n = x.shape[0]
    loss = float(-(t * logp).sum() / n)
    g = (np.exp(logp) - t) / n
    return loss, HeadGrad(g.T @ x, g.sum(axis=0))


class TrainingError(RuntimeError):
    pass


def train_probe(data, config: TrainConfig, targets=None, init: Optional[LinearHead] = None,
                class_count: Optional[int] = None) -> LinearHead:
    """Mini-batch momentum SGD on cross-entropy.

    ``targets`` overrides the ground-truth labels of ``data`` with hard ids
    (1-D) or soft distributions (2-D). Runs ``epochs * ceil(N / batch_size)``
    steps, truncated at ``max_steps``.
    """
    n = len(data)
    if n == 0:
        raise TrainingError("empty training set")
    C = class_count or data.class_count
    if targets is None:
        if data.labels is None:
            raise TrainingError("no targets: dataset has no labels and no annotations given")
        targets = data.labels
    else:
        t = np.asarray(targets)
        if (t.ndim == 1) != (config.label_mode == "hard"):
            raise ValueError(f"targets of ndim {t.ndim} do not match label_mode {config.label_mode!r}")
    T = as_targets(targets, C)
    if T.shape[0] != n:
        raise ValueError(f"{T.shape[0]} targets for {n} rows")
    X = np.ascontiguousarray(data.features, dtype=np.float64)
    head = init if init is not None else init_head(C, X.shape[1], config.seed)
    if head.feature_dim != X.shape[1] or head.class_count != C:
        raise ValueError("initial head does not match data dimensions")

    steps_per_epoch = -(-n // config.batch_size)
    n_steps = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        n_steps = min(n_steps, config.max_steps)
    if n_steps == 0:
        return head
    epochs_needed = -(-n_steps // steps_per_epoch)
    rng = np.random.default_rng([config.seed, 0x5EED])
    perms = np.stack([rng.permutation(n) for _ in range(epochs_needed)]).astype(np.int64)

    W = head.weights.copy()
    b = head.bias.copy()
    loss, bad = _kernels.sgd(W, b, X, T, perms, steps_per_epoch, config.batch_size,
                             config.learning_rate, config.momentum, n_steps)
    if bad >= 0:
        raise TrainingError(f"non-finite loss {loss} at step {bad} "
                            f"(lr={config.learning_rate}, batch={config.batch_size})")
    W, b = _round32(W), _round32(b)
    if not (np.isfinite(W).all() and np.isfinite(b).all()):
        raise TrainingError(f"non-finite parameters after {n_steps} steps (lr={config.learning_rate})")
    return LinearHead(W, b)


def topk_classes(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` most probable classes per row, ties to lower ids."""
    order = np.argsort(-np.asarray(probs), axis=1, kind="stable")
    return order[:, :k]


def rank_of(probs: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Zero-based rank of ``classes[i]`` in row ``i`` under lowest-id tie-breaking."""
    probs = np.asarray(probs)
    classes = np.asarray(classes, dtype=np.int64)
    rows = np.arange(probs.shape[0])
    ref = probs[rows, classes][:, None]
    ids = np.arange(probs.shape[1])[None, :]
    return ((probs > ref) | ((probs == ref) & (ids < classes[:, None]))).sum(axis=1)


def evaluate_topk(head: LinearHead, data, k: int = 1) -> float:
    if data.labels is None:
        raise ValueError("evaluation requires ground-truth labels")
    if not 1 <= k <= head.class_count:
        raise ValueError(f"k must lie in [1, {head.class_count}]")
    if len(data) == 0:
        raise ValueError("evaluation set is empty")
    probs = forward(head, data.features).probs
    return float(np.mean(rank_of(probs, data.labels) < k))


def _as_annotation(v):
    if isinstance(v, Predictions):
        return v.probs, False
    v = np.asarray(v)
    if v.ndim == 0:
        return v.reshape(1), True
    if v.ndim == 1 and v.dtype.kind not in "iub":
        return v[None, :], True
    return v, False


def distance(a, b):
    """Per-row distance between annotations and/or predictions.

    Integer ids are hard labels; float rows (or :class:`Predictions`) are
    distributions. hard/hard is 0-1 disagreement, hard/soft the negative
    log-probability of the hard id, soft/soft the cross-entropy
    ``-sum a log b``. Logs are clamped at 1e-12. Two single-example inputs
    give a float.
    """
    a, single_a = _as_annotation(a)
    b, single_b = _as_annotation(b)
    a_hard, b_hard = a.ndim == 1, b.ndim == 1
    if a_hard and b_hard:
        out = (a != b).astype(np.float64)
    elif a_hard or b_hard:
        hard, soft = (a, b) if a_hard else (b, a)
        p = soft[np.arange(soft.shape[0]), hard.astype(np.int64)]
        out = -np.log(np.maximum(p, LOG_CLAMP))
    else:
        out = -(a * np.log(np.maximum(b, LOG_CLAMP))).sum(axis=1)
    return float(out[0]) if single_a and single_b else out
