"""Co-supervised training loop, PGR, and the experiment sweeps."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .assignment import (AssignmentPrior, assignment_accuracy, likelihood_from_probs, oracle_assign,
                         posterior_from_likelihoods)
from .denoise import DenoiseConfig, two_phase_denoise
from .hierarchy import AnnotatedSet, SupervisorHierarchy, combine_annotations
from .probe import LinearHead, Predictions, TrainConfig, evaluate_topk, forward, train_probe
from .store import split_dataset

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def pgr(s: float, s_weak: float, s_ceiling: float) -> float:
    """Performance gap recovered: ``(s - s_weak) / (s_ceiling - s_weak)``."""
    gap = s_ceiling - s_weak
    if gap == 0:
        raise ZeroDivisionError("ceiling equals weak performance; PGR is undefined")
    return (s - s_weak) / gap


@dataclass(frozen=True, eq=False)
class Task:
    """Paired strong/weak datasets with the student train/eval rows."""

    strong: object
    weak: object
    train_indices: np.ndarray
    eval_indices: np.ndarray

    def __post_init__(self):
        if self.strong.n != self.weak.n:
            raise ValueError("strong and weak views differ in row count")
        if np.intersect1d(self.train_indices, self.eval_indices).size:
            raise ValueError("train and eval rows overlap")

    @property
    def strong_train(self):
        return self.strong.view(self.train_indices)

    @property
    def strong_eval(self):
        return self.strong.view(self.eval_indices)

    @property
    def weak_train(self):
        return self.weak.view(self.train_indices)

    @property
    def weak_eval(self):
        return self.weak.view(self.eval_indices)


def prepare_task(strong, weak, pool_seed: int, split_seed: Optional[int] = None,
                 teacher_fraction: float = 0.5, train_fraction: float = 0.8):
    """Carve a teacher pool, then split the rest into student train/eval rows.

    The pool depends only on ``pool_seed`` so a trained hierarchy can be
    reused across student seeds. Returns ``(task, teacher_pool)`` where
    ``teacher_pool`` is a weak view.
    """
    pool = split_dataset(strong, teacher_fraction, pool_seed)
    rest = pool.eval_indices
    inner = split_dataset(rest, train_fraction, pool_seed + 1 if split_seed is None else split_seed)
    task = Task(strong, weak, rest[inner.train_indices], rest[inner.eval_indices])
    return task, weak.view(pool.train_indices)


@dataclass(frozen=True)
class CslConfig:
    levels: int = 3
    label_mode: str = "hard"
    temperature: float = 1.0
    student: TrainConfig = field(default_factory=TrainConfig)
    teacher: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1))
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)
    prior: str = "uniform"
    assignment: str = "learned"
    warm_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("levels must be non-negative")
        if self.label_mode not in ("hard", "soft"):
            raise ValueError(f"unknown label mode {self.label_mode!r}")
        if self.assignment not in ("learned", "oracle"):
            raise ValueError(f"unknown assignment mode {self.assignment!r}")
        if self.prior != "uniform":
            raise ValueError("only the uniform prior is configurable; pass tables to run_csl")

    @property
    def student_config(self) -> TrainConfig:
        return replace(self.student, seed=self.seed, label_mode=self.label_mode,
                       soft_temperature=self.temperature)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CslConfig":
        d = dict(d)
        for key, typ in (("student", TrainConfig), ("teacher", TrainConfig), ("denoise", DenoiseConfig)):
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RoundDiagnostics:
    level: int
    supervisors: int
    assignment_accuracy: Optional[float]
    kept_fraction: float
    student_top1: float
    relaxed: list = field(default_factory=list)


@dataclass
class PgrReport:
    s_weak: float
    s_student: float
    s_ceiling: float
    pgr: float
    mode: str = "vanilla"
    rounds: list = field(default_factory=list)
    students: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "s_weak": self.s_weak,
            "s_student": self.s_student,
            "s_ceiling": self.s_ceiling,
            "pgr": self.pgr,
            "rounds": [asdict(r) for r in self.rounds],
        }


def train_ceiling(task: Task, config: CslConfig) -> tuple[LinearHead, float]:
    """Student trained on clean ground truth of the train rows."""
    cfg = replace(config.student_config, label_mode="hard")
    head = train_probe(task.strong_train, cfg)
    return head, evaluate_topk(head, task.strong_eval)


def _annotations(head: LinearHead, weak_features, config: CslConfig):
    pred = forward(head, weak_features, config.temperature)
    return pred.top1 if config.label_mode == "hard" else pred.probs


def run_vanilla(task: Task, generalist: LinearHead, config: CslConfig,
                ceiling: Optional[float] = None) -> tuple[LinearHead, PgrReport]:
    """Single-teacher weak-to-strong baseline (the initial student)."""
    if ceiling is None:
        ceiling = train_ceiling(task, config)[1]
    ann = _annotations(generalist, task.weak_train.features, config)
    student = train_probe(task.strong_train, config.student_config, targets=ann)
    s_weak = evaluate_topk(generalist, task.weak_eval)
    s = evaluate_topk(student, task.strong_eval)
    report = PgrReport(s_weak, s, ceiling, pgr(s, s_weak, ceiling), "vanilla", students=[student])
    return student, report


def _learned_assignment(supervisors, weak_features, student: Predictions, config: CslConfig,
                        prior: Optional[AssignmentPrior]):
    lik = np.stack([
        likelihood_from_probs(forward(s.head, weak_features, config.temperature).probs, student, config.label_mode)
        for s in supervisors], axis=1)
    prior = prior or AssignmentPrior()
    return posterior_from_likelihoods(lik, prior.matrix(*lik.shape))


def run_csl(task: Task, hierarchy: SupervisorHierarchy, config: CslConfig, ceiling: Optional[float] = None,
            priors: Optional[dict] = None) -> tuple[LinearHead, PgrReport]:
    """Alternate teacher assignment and (denoised) student training over levels 1..K.

    ``priors`` optionally maps a level to a fixed :class:`AssignmentPrior`
    over the train rows; the default is uniform.
    """
    K = config.levels
    if hierarchy.depth < K:
        raise PipelineError(f"hierarchy has {hierarchy.depth} specialist levels, config asks for {K}")
    if ceiling is None:
        ceiling = train_ceiling(task, config)[1]
    student, vanilla = run_vanilla(task, hierarchy.level(0)[0].head, config, ceiling)
    students = [student]
    rounds = []
    strong_train, weak_train = task.strong_train, task.weak_train
    weak_feats = weak_train.features
    strong_feats = strong_train.features
    cfg = config.student_config
    for k in range(1, K + 1):
        sups = hierarchy.level(k)
        scopes = [s.scope for s in sups]
        per_sup = [AnnotatedSet(np.arange(len(weak_train)), _annotations(s.head, weak_feats, config),
                                np.full(len(weak_train), s.index), k, config.label_mode) for s in sups]
        try:
            oracle = oracle_assign(weak_train, scopes)
        except ValueError:
            oracle = None
        if config.assignment == "oracle":
            if oracle is None:
                raise PipelineError("oracle assignment needs ground-truth tags on the train rows")
            z_hat = oracle
        else:
            pred = forward(student, strong_feats)
            post = _learned_assignment(sups, weak_feats, pred, config, (priors or {}).get(k))
            z_hat = post.z_hat
        annotated = combine_annotations(per_sup, z_hat)
        student, kept, verdicts = two_phase_denoise(
            strong_train, annotated, len(sups), cfg, config.denoise,
            init=student if config.warm_start else None)
        if len(kept) == 0:
            raise PipelineError(f"round {k}: no annotations survived filtering")
        students.append(student)
        rounds.append(RoundDiagnostics(
            level=k,
            supervisors=len(sups),
            assignment_accuracy=None if oracle is None else assignment_accuracy(z_hat, oracle),
            kept_fraction=len(kept) / len(annotated),
            student_top1=evaluate_topk(student, task.strong_eval),
            relaxed=list(verdicts.relaxed),
        ))
        log.info("round %d: %d supervisors, kept %.3f, top1 %.4f", k, len(sups),
                 rounds[-1].kept_fraction, rounds[-1].student_top1)
    s = evaluate_topk(student, task.strong_eval)
    report = PgrReport(vanilla.s_weak, s, ceiling, pgr(s, vanilla.s_weak, ceiling), "csl",
                       rounds=rounds, students=students)
    return student, report


# -- sweeps ------------------------------------------------------------------

@dataclass
class SweepResult:
    kind: str
    param_name: str
    points: list
    metadata: dict = field(default_factory=dict)

    @property
    def params(self) -> list:
        return [p for p, _ in self.points]


def run_metadata(config: CslConfig, **extra) -> dict:
    return {"config_hash": config.config_hash(), "seed": config.seed,
            "threads": _kernels.thread_count(), "backend": _kernels.backend(), **extra}


def capability_gap_sweep(task: Task, teacher_pool, truncations: Sequence[int], config: CslConfig,
                         ceiling: Optional[float] = None) -> SweepResult:
    """Vanilla weak-to-strong PGR for generalists truncated at each ``max_steps``."""
    truncations = sorted(int(t) for t in truncations)
    if len(set(truncations)) != len(truncations):
        raise ValueError("truncation points must be distinct")
    if ceiling is None:
        ceiling = train_ceiling(task, config)[1]
    points = []
    for t in truncations:
        teacher = train_probe(teacher_pool, replace(config.teacher, max_steps=t))
        _, report = run_vanilla(task, teacher, config, ceiling)
        report.students = []
        points.append((t, report))
    return SweepResult("gap", "max_steps", points, run_metadata(config))


def collective_accuracy(supervisors, weak_features, labels, z_hat) -> float:
    """Accuracy when each row is labeled by its assigned supervisor's top-1."""
    top1 = np.stack([forward(s.head, weak_features).top1 for s in supervisors])
    picked = top1[np.asarray(z_hat), np.arange(len(labels))]
    return float(np.mean(picked == labels))


def supervisor_count_sweep(task: Task, hierarchy: SupervisorHierarchy, mode: str, config: CslConfig,
                           students: Optional[list] = None) -> SweepResult:
    """Collective teacher accuracy on the eval rows at every hierarchy level.

    ``learned`` assigns each level-k row from the round-(k-1) CSL student;
    pass ``students`` (as in ``PgrReport.students``) to reuse a finished run.
    """
    if mode not in ("oracle", "learned"):
        raise ValueError(f"unknown assignment mode {mode!r}")
    if hierarchy.depth < 1:
        raise ValueError("count sweep needs at least one specialist level")
    weak_eval = task.weak_eval
    labels = weak_eval.labels
    if labels is None:
        raise ValueError("count sweep needs ground-truth labels on the eval rows")
    K = min(config.levels, hierarchy.depth) if config.levels else hierarchy.depth
    if mode == "learned" and students is None:
        _, report = run_csl(task, hierarchy, replace(config, levels=K))
        students = report.students
    points = []
    for k in range(0, K + 1):
        sups = hierarchy.level(k)
        if k == 0 or len(sups) == 1:
            z = np.zeros(len(labels), dtype=np.int64)
        elif mode == "oracle":
            z = oracle_assign(weak_eval, [s.scope for s in sups])
        else:
            pred = forward(students[k - 1], task.strong_eval.features)
            z = _learned_assignment(sups, weak_eval.features, pred, config, None).z_hat
        points.append((len(sups), collective_accuracy(sups, weak_eval.features, labels, z)))
    return SweepResult("count", "supervisors", points, run_metadata(config, mode=mode))


def ensemble_baselines(supervisors, weak_features, mode: str = "majority-vote") -> Predictions:
    """Majority vote over top-1 annotations or the mean of soft outputs."""
    if not supervisors:
        raise ValueError("need at least one supervisor")
    preds = [forward(s.head if hasattr(s, "head") else s, weak_features) for s in supervisors]
    C = preds[0].probs.shape[1]
    if mode == "majority-vote":
        votes = np.zeros((len(preds[0]), C))
        for p in preds:
            votes[np.arange(len(p)), p.top1] += 1
        probs = votes / len(preds)
    elif mode == "average":
        probs = np.mean([p.probs for p in preds], axis=0)
    else:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    with np.errstate(divide="ignore"):
        return Predictions(np.log(probs), probs)
