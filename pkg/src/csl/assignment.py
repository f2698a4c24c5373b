"""Teacher assignment: posterior over the supervisors of a level given the student."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .hierarchy import CLASS, Scope, Supervisor
from .probe import LOG_CLAMP, Predictions, distance, forward


@dataclass(frozen=True, eq=False)
class AssignmentPosterior:
    probs: np.ndarray

    @property
    def z_hat(self) -> np.ndarray:
        return assign(self.probs)


@dataclass(frozen=True, eq=False)
class AssignmentPrior:
    """``uniform`` or a fixed ``n x m`` table (e.g. from a domain classifier)."""

    kind: str = "uniform"
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed-table"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "fixed-table":
            t = np.asarray(self.table, dtype=np.float64)
            if t.ndim != 2 or (t < 0).any() or (np.abs(t.sum(axis=1) - 1.0) > 1e-6).any():
                raise ValueError("prior table rows must be distributions")
            object.__setattr__(self, "table", t)

    def matrix(self, n: int, m: int) -> np.ndarray:
        if self.kind == "uniform":
            return np.full((n, m), 1.0 / m)
        if self.table.shape != (n, m):
            raise ValueError(f"prior table shape {self.table.shape} != {(n, m)}")
        return self.table


def likelihood_from_probs(supervisor_probs: np.ndarray, student: Predictions, label_mode: str) -> np.ndarray:
    if label_mode == "hard":
        rows = np.arange(len(student))
        lik = supervisor_probs[rows, student.top1]
    elif label_mode == "soft":
        lik = np.exp(-distance(student.probs, supervisor_probs))
    else:
        raise ValueError(f"unknown label mode {label_mode!r}")
    return np.clip(lik, LOG_CLAMP, 1.0)


def teacher_likelihood(supervisor: Supervisor, weak_features, student: Predictions,
                       label_mode: str = "hard", temperature: float = 1.0) -> np.ndarray:
    """How well ``supervisor`` explains the student's current outputs.

    Hard mode: the supervisor's probability of the student's top-1 class.
    Soft mode: ``exp(-CE(student, supervisor))``.
    """
    probs = forward(supervisor.head, weak_features, temperature).probs
    if probs.shape != student.probs.shape:
        raise ValueError("supervisor and student predictions disagree in shape")
    return likelihood_from_probs(probs, student, label_mode)


def posterior_from_likelihoods(likelihoods: np.ndarray, prior: np.ndarray) -> AssignmentPosterior:
    scores = np.asarray(prior) * np.asarray(likelihoods)
    total = scores.sum(axis=1, keepdims=True)
    assert (total > 0).all(), "posterior normalizer vanished despite clamping"
    return AssignmentPosterior(scores / total)


def posterior(supervisors: Sequence[Supervisor], weak_features, student: Predictions,
              prior: Optional[AssignmentPrior] = None, label_mode: str = "hard",
              temperature: float = 1.0) -> AssignmentPosterior:
    if not supervisors:
        raise ValueError("need at least one supervisor")
    lik = np.stack([teacher_likelihood(s, weak_features, student, label_mode, temperature)
                    for s in supervisors], axis=1)
    prior = prior or AssignmentPrior()
    return posterior_from_likelihoods(lik, prior.matrix(*lik.shape))


def assign(scores) -> np.ndarray:
    """Row-wise argmax of (possibly unnormalized) scores, ties to the lowest index."""
    return np.argmax(np.asarray(scores), axis=1)


def oracle_assign(dataset, scopes: Sequence[Scope]) -> np.ndarray:
    kind = scopes[0].kind
    ids = dataset.labels if kind == CLASS else dataset.domains
    if ids is None:
        raise ValueError(f"oracle assignment over {kind} scopes needs the matching tags")
    z = np.full(len(ids), -1, dtype=np.int64)
    for i, scope in enumerate(scopes):
        z[scope.contains(ids)] = i
    if (z < 0).any():
        raise ValueError("some rows fall outside every scope")
    return z


def assignment_accuracy(predicted, oracle) -> float:
    predicted, oracle = np.asarray(predicted), np.asarray(oracle)
    if predicted.shape != oracle.shape:
        raise ValueError("assignment vectors differ in length")
    if predicted.size == 0:
        raise ValueError("empty assignment")
    return float(np.mean(predicted == oracle))


def write_assignment_dump(path, indices, post: AssignmentPosterior) -> None:
    m = post.probs.shape[1]
    lines = ["example_index,z_hat," + ",".join(f"posterior_{j}" for j in range(m))]
    for i, z, row in zip(indices, post.z_hat, post.probs):
        lines.append(f"{int(i)},{int(z)}," + ",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
