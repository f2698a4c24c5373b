"""Paired strong/weak synthetic embeddings with a controllable capability gap.

Strong rows are Gaussian around class-and-domain means; the weak view is a
fixed random projection of the strong row to fewer dimensions plus extra
Gaussian noise, so weak-teacher errors come from the representation rather
than from corrupted labels.

Randomness is drawn from numpy's PCG64 through ``SeedSequence`` spawn keys:
``(0,)`` class prototypes, ``(1,)`` domain offsets, ``(2,)`` projection,
``(3, c, m)`` the rows of class ``c`` in domain ``m``, ``(4,)`` the corruption
mask and ``(5,)`` corruption targets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .store import EmbeddingDataset

_STREAM_PROTOTYPES = 0
_STREAM_DOMAINS = 1
_STREAM_PROJECTION = 2
_STREAM_ROWS = 3
_STREAM_MASK = 4
_STREAM_FLIPS = 5


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 16
    domains: int = 4
    samples_per_class: int = 200
    strong_dim: int = 64
    weak_dim: int = 8
    class_margin: float = 2.6
    weak_noise_sigma: float = 0.3
    strong_noise_sigma: float = 0.2
    domain_shift: float = 0.3
    domain_jitter: float = 0.1
    corruption_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2 or self.domains < 1 or self.samples_per_class < 1:
            raise ValueError("need classes >= 2, domains >= 1, samples_per_class >= 1")
        if not 1 <= self.weak_dim < self.strong_dim:
            raise ValueError("weak_dim must be positive and smaller than strong_dim")
        if not self.class_margin > 0:
            raise ValueError("class_margin must be positive")
        if not 0 < self.strong_noise_sigma < self.weak_noise_sigma:
            raise ValueError("need 0 < strong_noise_sigma < weak_noise_sigma")
        if self.domain_shift < 0 or self.domain_jitter < 0:
            raise ValueError("domain_shift and domain_jitter must be non-negative")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ValueError("corruption_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthSpec keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def default_benchmark() -> SynthSpec:
    """The pinned desk-scale benchmark (16 classes, 4 domains, 12 800 rows).

    Calibrated so that a one-epoch weak generalist lands in 0.45-0.70 top-1
    and a strong probe on clean labels reaches >= 0.95; the calibration is
    re-checked by the test suite.
    """
    return SynthSpec(classes=16, domains=4, samples_per_class=200, strong_dim=64, weak_dim=8,
                     class_margin=2.6, weak_noise_sigma=0.3, strong_noise_sigma=0.2,
                     domain_shift=0.3, domain_jitter=0.1, corruption_rate=0.0, seed=0)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _unit_rows(rng, n, d):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def class_means(spec: SynthSpec) -> np.ndarray:
    """``C x M x D_strong`` array of row means."""
    protos = spec.class_margin * _unit_rows(_rng(spec.seed, _STREAM_PROTOTYPES), spec.classes, spec.strong_dim)
    drng = _rng(spec.seed, _STREAM_DOMAINS)
    offsets = spec.domain_shift * _unit_rows(drng, spec.domains, spec.strong_dim)
    jitter = spec.domain_jitter * drng.standard_normal(
        (spec.classes, spec.domains, spec.strong_dim)) / np.sqrt(spec.strong_dim)
    return protos[:, None, :] + offsets[None, :, :] + jitter


def projection(spec: SynthSpec) -> np.ndarray:
    rng = _rng(spec.seed, _STREAM_PROJECTION)
    return rng.standard_normal((spec.weak_dim, spec.strong_dim)) / np.sqrt(spec.strong_dim)


def generate(spec: SynthSpec) -> tuple[EmbeddingDataset, EmbeddingDataset, np.ndarray]:
    """Return ``(strong, weak, corruption_mask)`` with identical row order and tags.

    Rows are ordered by domain, then class, then sample.
    """
    means = class_means(spec)
    P = projection(spec)
    strong_rows, weak_rows, labels, doms = [], [], [], []
    for m in range(spec.domains):
        for c in range(spec.classes):
            rng = _rng(spec.seed, _STREAM_ROWS, c, m)
            xs = means[c, m] + spec.strong_noise_sigma * rng.standard_normal(
                (spec.samples_per_class, spec.strong_dim))
            xw = xs @ P.T + spec.weak_noise_sigma * rng.standard_normal(
                (spec.samples_per_class, spec.weak_dim))
            strong_rows.append(xs)
            weak_rows.append(xw)
            labels.append(np.full(spec.samples_per_class, c))
            doms.append(np.full(spec.samples_per_class, m))
    labels = np.concatenate(labels)
    doms = np.concatenate(doms)
    tag = f"synth-{spec.spec_hash()}"
    strong = EmbeddingDataset(np.concatenate(strong_rows).astype(np.float32), labels, doms,
                              spec.classes, spec.domains, tag + "-strong")
    weak = EmbeddingDataset(np.concatenate(weak_rows).astype(np.float32), labels, doms,
                            spec.classes, spec.domains, tag + "-weak")
    n = len(labels)
    if spec.corruption_rate > 0:
        mask = _rng(spec.seed, _STREAM_MASK).random(n) < spec.corruption_rate
    else:
        mask = np.zeros(n, dtype=bool)
    return strong, weak, mask


def flip_targets(spec: SynthSpec, n: int) -> np.ndarray:
    """Replacement class for every row, guaranteed different from its true label.

    Returned as an offset in ``[1, C)`` to add modulo ``C``.
    """
    return _rng(spec.seed, _STREAM_FLIPS).integers(1, spec.classes, size=n)


def corrupt_annotations(annotations, true_labels, mask, offsets, class_count: int):
    """Apply label flips to the rows selected by ``mask``.

    Hard annotations become ``(label + offset) % C``. Soft annotations get the
    probability of their top class swapped with that of the flip target, so
    the top class moves to a wrong id.
    """
    ann = np.array(annotations, copy=True)
    mask = np.asarray(mask, dtype=bool)
    target = (np.asarray(true_labels) + np.asarray(offsets)) % class_count
    if ann.ndim == 1:
        ann[mask] = target[mask]
        return ann
    rows = np.flatnonzero(mask)
    top = np.argmax(ann[rows], axis=1)
    tgt = target[rows]
    tgt = np.where(tgt == top, (tgt + 1) % class_count, tgt)
    a, b = ann[rows, top].copy(), ann[rows, tgt].copy()
    ann[rows, top] = b
    ann[rows, tgt] = a
    return ann
