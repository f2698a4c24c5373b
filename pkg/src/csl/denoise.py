"""Annotation filtering via teacher-student and local-global consistency.

A round of denoising first trains one local student per assigned supervisor
on that supervisor's share of the annotations, then keeps an example only if

* its annotation is among the local student's top-``k`` classes, and
* the local student's top-1 is among the global student's top-``k`` classes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .hierarchy import AnnotatedSet
from .probe import LinearHead, TrainConfig, distance, forward, rank_of, train_probe

log = logging.getLogger(__name__)

PASSED = "none"
FAILED_TS = "teacher-student"
FAILED_LG = "local-global"


@dataclass(frozen=True)
class DenoiseConfig:
    agreement_k: int = 3
    apply_teacher_student: bool = True
    apply_local_global: bool = True
    min_kept_fraction: float = 0.2
    local_global_k: Optional[int] = None
    # phase-2 retrains of the global student per round
    retrain_iterations: int = 1

    def __post_init__(self):
        if self.agreement_k < 1 or (self.local_global_k is not None and self.local_global_k < 1):
            raise ValueError("agreement thresholds must be >= 1")
        if not 0.0 < self.min_kept_fraction <= 1.0:
            raise ValueError("min_kept_fraction must lie in (0, 1]")
        if self.retrain_iterations < 1:
            raise ValueError("retrain_iterations must be >= 1")

    @property
    def lg_k(self) -> int:
        return self.local_global_k or self.agreement_k

    @property
    def enabled(self) -> bool:
        return self.apply_teacher_student or self.apply_local_global


@dataclass(frozen=True, eq=False)
class FilterVerdicts:
    """Per-example outcome; ``keep[i]`` iff ``failed_check[i] == "none"``."""

    keep: np.ndarray
    teacher_student_distance: np.ndarray
    local_global_distance: np.ndarray
    failed_check: np.ndarray
    relaxed: tuple = ()

    @property
    def kept_fraction(self) -> float:
        return float(self.keep.mean()) if self.keep.size else 0.0


def train_local_students(strong_split, annotated: AnnotatedSet, supervisor_count: int,
                         config: TrainConfig) -> dict[int, LinearHead]:
    """One student per supervisor, trained on the examples assigned to it.

    ``strong_split`` holds the strong features that ``annotated.indices``
    index into. Supervisors with no assigned examples get no student.
    """
    students = {}
    for j in range(supervisor_count):
        pos = np.flatnonzero(annotated.source == j)
        if pos.size == 0:
            log.info("supervisor %d has no assigned examples; its rows skip local checks", j)
            continue
        rows = strong_split.view(annotated.indices[pos])
        students[j] = train_probe(rows, config, targets=annotated.annotations[pos])
    if not students:
        raise ValueError("all assignment partitions are empty")
    return students


def teacher_student_check(local_probs: np.ndarray, annotations: np.ndarray, agreement_k: int) -> np.ndarray:
    ann = annotations if annotations.ndim == 1 else np.argmax(annotations, axis=1)
    return rank_of(local_probs, ann) < agreement_k


def local_global_check(global_probs: np.ndarray, local_probs: np.ndarray, agreement_k: int) -> np.ndarray:
    return rank_of(global_probs, np.argmax(local_probs, axis=1)) < agreement_k


def _local_probs(strong_features, annotated: AnnotatedSet, local_students: dict, class_count: int):
    n = len(annotated)
    probs = np.full((n, class_count), np.nan)
    has_local = np.zeros(n, dtype=bool)
    for j, head in local_students.items():
        pos = np.flatnonzero(annotated.source == j)
        if pos.size:
            probs[pos] = forward(head, strong_features[annotated.indices[pos]]).probs
            has_local[pos] = True
    return probs, has_local


def _verdicts(annotated, local_p, has_local, global_p, config, use_ts, use_lg):
    n = len(annotated)
    ts_ok = np.ones(n, dtype=bool)
    lg_ok = np.ones(n, dtype=bool)
    ts_d = np.full(n, np.nan)
    lg_d = np.full(n, np.nan)
    loc = np.flatnonzero(has_local)
    if loc.size:
        ann = annotated.annotations[loc]
        ts_d[loc] = distance(ann, local_p[loc])
        lg_d[loc] = distance(global_p[loc], local_p[loc])
        if use_ts:
            ts_ok[loc] = teacher_student_check(local_p[loc], ann, config.agreement_k)
        if use_lg:
            lg_ok[loc] = local_global_check(global_p[loc], local_p[loc], config.lg_k)
    failed = np.where(~ts_ok, FAILED_TS, np.where(~lg_ok, FAILED_LG, PASSED)).astype(object)
    return ts_ok & lg_ok, ts_d, lg_d, failed


def filter_annotated_set(annotated: AnnotatedSet, strong_features, local_students: dict,
                         global_student: Optional[LinearHead], config: DenoiseConfig):
    """Apply the enabled checks; returns ``(kept, verdicts)``.

    ``global_student`` may be ``None`` only when the local-global check is
    disabled. If fewer than ``min_kept_fraction`` of the examples survive,
    the local-global check is dropped first, then the teacher-student check.
    """
    use_ts, use_lg = config.apply_teacher_student, config.apply_local_global
    if use_lg and global_student is None:
        raise ValueError("local-global check needs a global student")
    strong_features = np.asarray(strong_features)
    heads = list(local_students.values()) + ([global_student] if global_student is not None else [])
    C = heads[0].class_count if heads else 1
    local_p, has_local = _local_probs(strong_features, annotated, local_students, C)
    global_p = (forward(global_student, strong_features[annotated.indices]).probs
                if global_student is not None else np.full_like(local_p, np.nan))
    relaxed = []
    n = len(annotated)
    while True:
        keep, ts_d, lg_d, failed = _verdicts(annotated, local_p, has_local, global_p, config, use_ts, use_lg)
        if n == 0 or keep.sum() >= math.ceil(config.min_kept_fraction * n - 1e-9):
            break
        if use_lg:
            use_lg = False
            relaxed.append(FAILED_LG)
        elif use_ts:
            use_ts = False
            relaxed.append(FAILED_TS)
        else:
            break
        log.warning("kept fraction %.3f below %.3f; relaxing %s check",
                    keep.mean(), config.min_kept_fraction, relaxed[-1])
    verdicts = FilterVerdicts(keep, ts_d, lg_d, failed, tuple(relaxed))
    return annotated.subset(np.flatnonzero(keep)), verdicts


def two_phase_denoise(strong_split, annotated: AnnotatedSet, supervisor_count: int,
                      train_config: TrainConfig, config: DenoiseConfig,
                      init: Optional[LinearHead] = None):
    """Filter a round's annotations and train the round's global student.

    Phase 1 trains local students and applies the teacher-student check; the
    survivors train a global student. Phase 2 adds the local-global check
    against that student and retrains on the final kept set. With a single
    local student, local and global coincide and the local student is its
    own reference.

    Returns ``(global_student, kept, verdicts)``.
    """
    def fit(rows: AnnotatedSet) -> LinearHead:
        return train_probe(strong_split.view(rows.indices), train_config,
                           targets=rows.annotations, init=init)

    if not config.enabled:
        n = len(annotated)
        nan = np.full(n, np.nan)
        verdicts = FilterVerdicts(np.ones(n, dtype=bool), nan, nan.copy(), np.full(n, PASSED, dtype=object))
        return fit(annotated), annotated, verdicts

    feats = strong_split.features
    local = train_local_students(strong_split, annotated, supervisor_count, train_config)
    kept, verdicts = filter_annotated_set(annotated, feats, local, None,
                                          replace(config, apply_local_global=False))
    head = fit(kept)
    if config.apply_local_global:
        single = next(iter(local.values())) if len(local) == 1 else None
        for _ in range(config.retrain_iterations):
            prev = kept.indices
            kept, verdicts = filter_annotated_set(annotated, feats, local, single or head, config)
            if np.array_equal(prev, kept.indices):
                break
            head = fit(kept)
    return head, kept, verdicts


def small_loss_filter(distances, eta: float) -> np.ndarray:
    """Keep the ``ceil((1 - eta) N)`` smallest-distance examples, ties by index."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    d = np.asarray(distances, dtype=np.float64)
    n_keep = math.ceil((1.0 - eta) * d.size - 1e-9)
    order = np.argsort(d, kind="stable")
    return np.sort(order[:n_keep])


def write_verdict_dump(path, annotated: AnnotatedSet, verdicts: FilterVerdicts) -> None:
    lines = ["example_index,z_hat,ts_distance,lg_distance,failed_check,kept"]
    for i in range(len(annotated)):
        lines.append(",".join([
            str(int(annotated.indices[i])), str(int(annotated.source[i])),
            format(verdicts.teacher_student_distance[i], ".17g"),
            format(verdicts.local_global_distance[i], ".17g"),
            str(verdicts.failed_check[i]), str(int(verdicts.keep[i])),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")
