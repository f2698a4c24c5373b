import functools

import numpy as np
import pytest

from csl.cosupervise import CslConfig, prepare_task, train_ceiling
from csl.hierarchy import AnnotatedSet, build_class_partition_levels, train_hierarchy
from csl.probe import LinearHead, TrainConfig
from csl.store import EmbeddingDataset
from csl.synthgen import default_benchmark, generate

SEEDS = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def benchmark_data():
    strong, weak, _ = generate(default_benchmark())
    return strong, weak


@functools.lru_cache(maxsize=None)
def benchmark_setup(seed, branching=(2, 4, 8)):
    """(task, teacher_pool, hierarchy, config, ceiling) on the pinned benchmark."""
    strong, weak = benchmark_data()
    cfg = CslConfig(seed=seed, teacher=TrainConfig(epochs=1, seed=seed))
    task, pool = prepare_task(strong, weak, seed)
    levels = build_class_partition_levels(strong.class_count, list(branching))
    hierarchy = train_hierarchy(pool, levels, cfg.teacher)
    _, ceiling = train_ceiling(task, cfg)
    return task, pool, hierarchy, cfg, ceiling


def blobs(n_per_class=50, classes=2, dim=2, margin=6.0, sigma=0.5, seed=0, domains=None):
    """Well-separated Gaussian blobs along the coordinate axes."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((classes, dim))
    for c in range(classes):
        centers[c, c % dim] = margin * (1 + c // dim)
    x = np.concatenate([centers[c] + sigma * rng.standard_normal((n_per_class, dim)) for c in range(classes)])
    y = np.repeat(np.arange(classes), n_per_class)
    d = None if domains is None else rng.integers(0, domains, len(y))
    return EmbeddingDataset(x.astype(np.float32), y, d, classes, domains or 1)


def random_instance(seed, n=None, C=None, D=3, m=None):
    """Random local and global heads plus hard annotations for filter checks."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(5, 60))
    C = C or int(rng.integers(2, 7))
    m = m or int(rng.integers(1, 4))
    feats = rng.standard_normal((n, D))
    heads = {j: LinearHead(rng.standard_normal((C, D)), rng.standard_normal(C)) for j in range(m)}
    glob = LinearHead(rng.standard_normal((C, D)), rng.standard_normal(C))
    ann = AnnotatedSet(np.arange(n), rng.integers(0, C, n), rng.integers(0, m, n), 1, "hard")
    return feats, heads, glob, ann, C


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
