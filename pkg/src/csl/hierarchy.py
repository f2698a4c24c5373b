"""Hierarchies of weak supervisors and their annotations."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .probe import LinearHead, Predictions, TrainConfig, forward, load_head, save_head, train_probe
from .store import restrict

CLASS = "class-subset"
DOMAIN = "domain-subset"


@dataclass(frozen=True)
class Scope:
    kind: str
    members: frozenset

    def __post_init__(self):
        if self.kind not in (CLASS, DOMAIN):
            raise ValueError(f"unknown scope kind {self.kind!r}")
        if not self.members:
            raise ValueError("scope must have at least one member")
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))

    def contains(self, ids) -> np.ndarray:
        return np.isin(np.asarray(ids), np.fromiter(self.members, dtype=np.int64))


def validate_partition(scopes: Sequence[Scope], universe: int) -> None:
    seen = set()
    for s in scopes:
        if any(m < 0 or m >= universe for m in s.members):
            raise ValueError(f"scope members {sorted(s.members)} outside [0, {universe})")
        overlap = seen & s.members
        if overlap:
            raise ValueError(f"scopes overlap on ids {sorted(overlap)}")
        seen |= s.members
    missing = set(range(universe)) - seen
    if missing:
        raise ValueError(f"scopes leave ids uncovered: {sorted(missing)}")


def _refines(fine: Sequence[Scope], coarse: Sequence[Scope]) -> bool:
    return all(any(f.members <= c.members for c in coarse) for f in fine)


def build_class_partition_levels(class_count: int, branching: Sequence[int],
                                 shuffle_seed: Optional[int] = None) -> list[list[Scope]]:
    """Contiguous class blocks, one level per branching factor.

    Uneven splits give the earliest blocks one extra class. With
    ``shuffle_seed`` the class ids are permuted once before blocking.
    """
    order = np.arange(class_count)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(class_count)
    levels = []
    for b in branching:
        if b < 1 or b > class_count:
            raise ValueError(f"branching factor {b} outside [1, {class_count}]")
        level = [Scope(CLASS, frozenset(blk.tolist())) for blk in np.array_split(order, b)]
        if levels and not _refines(level, levels[-1]):
            raise ValueError(f"branching {b} does not refine the previous level")
        levels.append(level)
    return levels


def build_domain_group_levels(domain_count: int, groups: Sequence[Sequence[Sequence[int]]]) -> list[list[Scope]]:
    levels = []
    for level in groups:
        scopes = [Scope(DOMAIN, frozenset(g)) for g in level]
        validate_partition(scopes, domain_count)
        levels.append(scopes)
    return levels


@dataclass(frozen=True, eq=False)
class Supervisor:
    level: int
    index: int
    scope: Scope
    head: LinearHead

    @property
    def id(self) -> tuple[int, int]:
        return (self.level, self.index)


@dataclass(frozen=True, eq=False)
class SupervisorHierarchy:
    levels: list
    kind: str = CLASS
    universe: int = 0

    def __post_init__(self):
        if not self.levels or len(self.levels[0]) != 1:
            raise ValueError("level 0 must hold exactly one generalist supervisor")
        for k, level in enumerate(self.levels):
            if k and len(level) < len(self.levels[k - 1]):
                raise ValueError(f"level {k} has fewer supervisors than level {k - 1}")
            validate_partition([s.scope for s in level], self.universe)
            if len({s.head.class_count for s in level}) != 1:
                raise ValueError(f"level {k} supervisors disagree on class count")

    @property
    def depth(self) -> int:
        """Number of specialist levels K (level 0 excluded)."""
        return len(self.levels) - 1

    def level(self, k: int) -> list:
        return self.levels[k]

    def sizes(self) -> list[int]:
        return [len(level) for level in self.levels]


def _full_scope(kind: str, universe: int) -> Scope:
    return Scope(kind, frozenset(range(universe)))


def _scope_view(dataset, scope: Scope):
    if scope.kind == CLASS:
        return restrict(dataset, classes=scope.members)
    return restrict(dataset, domains=scope.members)


def train_hierarchy(weak_dataset, scope_levels: Sequence[Sequence[Scope]], config: TrainConfig,
                    generalist: Optional[LinearHead] = None) -> SupervisorHierarchy:
    """Train the generalist on all rows and each specialist on its scope.

    ``scope_levels`` lists levels 1..K; level 0 is always the full-scope
    generalist (pass ``generalist`` to reuse a pre-trained one).
    """
    if weak_dataset.labels is None:
        raise ValueError("teacher training requires ground-truth labels")
    kind = scope_levels[0][0].kind if scope_levels else CLASS
    universe = weak_dataset.class_count if kind == CLASS else weak_dataset.domain_count
    if kind == DOMAIN and weak_dataset.domains is None:
        raise ValueError("domain scopes require domain tags")
    if generalist is None:
        generalist = train_probe(weak_dataset, config)
    levels = [[Supervisor(0, 0, _full_scope(kind, universe), generalist)]]
    for k, scopes in enumerate(scope_levels, start=1):
        level = []
        for i, scope in enumerate(scopes):
            if scope.kind != kind:
                raise ValueError("all levels must share one scope kind")
            sub = _scope_view(weak_dataset, scope)
            if len(sub) == 0:
                raise ValueError(f"supervisor ({k}, {i}) has no training rows in scope")
            level.append(Supervisor(k, i, scope, train_probe(sub, config,
                                                             class_count=weak_dataset.class_count)))
        levels.append(level)
    return SupervisorHierarchy(levels, kind, universe)


@dataclass(frozen=True, eq=False)
class AnnotatedSet:
    """Annotations for rows ``indices`` (positions in the annotated split).

    ``annotations`` is 1-D class ids in hard mode and ``n x C`` in soft mode;
    ``source`` is the supervisor index within ``level``.
    """

    indices: np.ndarray
    annotations: np.ndarray
    source: np.ndarray
    level: int
    label_mode: str

    def __len__(self):
        return len(self.indices)

    def subset(self, positions) -> "AnnotatedSet":
        positions = np.asarray(positions, dtype=np.int64)
        return AnnotatedSet(self.indices[positions], self.annotations[positions],
                            self.source[positions], self.level, self.label_mode)

    @property
    def hard(self) -> np.ndarray:
        return self.annotations if self.annotations.ndim == 1 else np.argmax(self.annotations, axis=1)


def supervisor_predictions(supervisor: Supervisor, weak_features, temperature: float = 1.0) -> Predictions:
    return forward(supervisor.head, weak_features, temperature)


def annotate(supervisor: Supervisor, weak_features, label_mode: str = "hard",
             temperature: float = 1.0) -> AnnotatedSet:
    if label_mode not in ("hard", "soft"):
        raise ValueError(f"unknown label mode {label_mode!r}")
    pred = forward(supervisor.head, weak_features, temperature)
    ann = pred.top1 if label_mode == "hard" else pred.probs
    n = len(pred)
    return AnnotatedSet(np.arange(n), ann, np.full(n, supervisor.index), supervisor.level, label_mode)


def combine_annotations(per_supervisor: Sequence[AnnotatedSet], z_hat: np.ndarray) -> AnnotatedSet:
    """Pick, for each row, the annotation of its assigned supervisor."""
    z_hat = np.asarray(z_hat, dtype=np.int64)
    stack = np.stack([a.annotations for a in per_supervisor])
    rows = np.arange(len(z_hat))
    first = per_supervisor[0]
    return AnnotatedSet(first.indices.copy(), stack[z_hat, rows], z_hat.copy(), first.level, first.label_mode)


def collective_predict(hierarchy: SupervisorHierarchy, level: int, weak_features, prior=None,
                       temperature: float = 1.0) -> Predictions:
    """Mixture prediction sum_z p(z|x) p(y|x,z) over the supervisors of ``level``.

    ``prior`` is ``None`` (uniform), an ``n x m`` matrix for a flat sum over
    ``level``, or a list of gating factors for the nested form: the first is
    ``n x m_1`` and each following one ``n x m_j x m_{j+1}`` holds
    ``p(z_{j+1} | x, z_j)``, ending at ``level``.
    """
    sups = hierarchy.level(level)
    probs = np.stack([forward(s.head, weak_features, temperature).probs for s in sups], axis=1)
    n, m = probs.shape[:2]
    if prior is None:
        gate = np.full((n, m), 1.0 / m)
    elif isinstance(prior, (list, tuple)):
        gate = np.asarray(prior[0], dtype=np.float64)
        _check_simplex(gate)
        for factor in prior[1:]:
            factor = np.asarray(factor, dtype=np.float64)
            _check_simplex(factor)
            gate = np.einsum("ni,nij->nj", gate, factor)
    else:
        gate = np.asarray(prior, dtype=np.float64)
        _check_simplex(gate)
    if gate.shape != (n, m):
        raise ValueError(f"gating of shape {gate.shape} does not match {(n, m)} supervisors")
    mixed = np.einsum("nm,nmc->nc", gate, probs)
    return Predictions(np.log(np.maximum(mixed, 1e-300)), mixed)


def _check_simplex(p: np.ndarray, tol: float = 1e-6) -> None:
    if (p < -tol).any() or (np.abs(p.sum(axis=-1) - 1.0) > tol).any():
        raise ValueError("prior rows must be normalized distributions")


# -- manifest ----------------------------------------------------------------

def save_hierarchy(hierarchy: SupervisorHierarchy, directory, extra: Optional[dict] = None) -> Path:
    """Write one head file per supervisor plus ``hierarchy.json``."""
    directory = Path(directory)
    (directory / "heads").mkdir(parents=True, exist_ok=True)
    levels = []
    for level in hierarchy.levels:
        entries = []
        for s in level:
            rel = f"heads/L{s.level}_{s.index}.cslh"
            save_head(s.head, directory / rel)
            entries.append({"level": s.level, "index": s.index,
                            "members": sorted(s.scope.members), "head": rel})
        levels.append(entries)
    manifest = {"kind": hierarchy.kind, "universe": hierarchy.universe, "levels": levels}
    if extra:
        manifest["meta"] = extra
    path = directory / "hierarchy.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_hierarchy(path) -> SupervisorHierarchy:
    path = Path(path)
    if path.is_dir():
        path = path / "hierarchy.json"
    manifest = json.loads(path.read_text())
    kind = manifest["kind"]
    levels = []
    for entries in manifest["levels"]:
        levels.append([Supervisor(e["level"], e["index"], Scope(kind, frozenset(e["members"])),
                                  load_head(path.parent / e["head"])) for e in entries])
    return SupervisorHierarchy(levels, kind, manifest["universe"])
