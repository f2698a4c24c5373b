from dataclasses import replace

import numpy as np
import pytest

from conftest import benchmark_setup, blobs
from csl.cosupervise import (CslConfig, PipelineError, capability_gap_sweep, ensemble_baselines, pgr,
                             prepare_task, run_csl, run_vanilla, supervisor_count_sweep)
from csl.denoise import DenoiseConfig
from csl.hierarchy import build_class_partition_levels, train_hierarchy
from csl.probe import LinearHead, TrainConfig, forward


def test_pgr_identities():
    assert pgr(0.4, 0.4, 0.9) == 0.0
    assert pgr(0.9, 0.4, 0.9) == 1.0
    assert pgr(0.65, 0.4, 0.9) == pytest.approx(0.5, abs=1e-15)
    assert pgr(0.3, 0.4, 0.9) < 0
    with pytest.raises(ZeroDivisionError):
        pgr(0.5, 0.7, 0.7)


def _small_problem(seed=0):
    strong = blobs(n_per_class=60, classes=4, dim=6, margin=3.0, sigma=0.6, seed=seed)
    rng = np.random.default_rng(seed + 100)
    wf = strong.features[:, :2] + rng.standard_normal((strong.n, 2)).astype(np.float32)
    from csl.store import EmbeddingDataset
    weak = EmbeddingDataset(wf, strong.labels, None, 4, 1)
    return strong, weak


def test_prepare_task_disjoint():
    strong, weak = _small_problem()
    task, pool = prepare_task(strong, weak, 0)
    sets = [set(task.train_indices), set(task.eval_indices), set(pool.indices)]
    assert sum(map(len, sets)) == strong.n
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])


def test_reduction_k1_equals_vanilla():
    strong, weak = _small_problem()
    task, pool = prepare_task(strong, weak, 0)
    cfg = CslConfig(levels=1, student=TrainConfig(epochs=3),
                    denoise=DenoiseConfig(apply_teacher_student=False, apply_local_global=False))
    h = train_hierarchy(pool, build_class_partition_levels(4, [1]), cfg.teacher)
    assert h.level(1)[0].head.equals(h.level(0)[0].head)
    v_student, v = run_vanilla(task, h.level(0)[0].head, cfg)
    c_student, c = run_csl(task, h, cfg)
    assert v_student.to_bytes() == c_student.to_bytes()
    assert v.pgr == c.pgr


def test_csl_rejects_shallow_hierarchy():
    strong, weak = _small_problem()
    task, pool = prepare_task(strong, weak, 0)
    h = train_hierarchy(pool, build_class_partition_levels(4, [2]), TrainConfig(epochs=1))
    with pytest.raises(PipelineError):
        run_csl(task, h, CslConfig(levels=2))


def test_config_roundtrip():
    cfg = CslConfig(levels=2, label_mode="soft", denoise=DenoiseConfig(agreement_k=2))
    assert CslConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.config_hash() == CslConfig.from_dict(cfg.to_dict()).config_hash()
    for bad in (dict(label_mode="x"), dict(assignment="x"), dict(prior="x"), dict(levels=-1)):
        with pytest.raises(ValueError):
            CslConfig(**bad)


def test_ensembles():
    heads = [LinearHead(np.array([[1.0], [0.0]]), np.zeros(2)), LinearHead(np.array([[0.0], [1.0]]), np.zeros(2)),
             LinearHead(np.array([[2.0], [0.0]]), np.zeros(2))]
    x = np.array([[1.0]])
    mv = ensemble_baselines(heads, x, "majority-vote")
    np.testing.assert_allclose(mv.probs, [[2 / 3, 1 / 3]])
    avg = ensemble_baselines(heads, x, "average")
    np.testing.assert_allclose(avg.probs, np.mean([forward(h, x).probs for h in heads], 0))
    with pytest.raises(ValueError):
        ensemble_baselines(heads, x, "median")


def test_count_sweep_oracle_not_worse_than_learned():
    task, _, h, cfg, _ = benchmark_setup(0)
    oracle = dict(supervisor_count_sweep(task, h, "oracle", cfg).points)
    learned = dict(supervisor_count_sweep(task, h, "learned", cfg).points)
    assert list(oracle) == [1, 2, 4, 8]
    assert oracle[1] == learned[1]
    for m in oracle:
        assert oracle[m] >= learned[m] - 0.02


def test_oracle_assignment_run_has_perfect_assignment():
    task, _, h, cfg, ceiling = benchmark_setup(0)
    _, rep = run_csl(task, h, replace(cfg, assignment="oracle"), ceiling)
    assert all(r.assignment_accuracy == 1.0 for r in rep.rounds)
    assert len(rep.students) == cfg.levels + 1


def test_gap_sweep_shape():
    task, pool, _, cfg, ceiling = benchmark_setup(0)
    res = capability_gap_sweep(task, pool, [40, 2], cfg, ceiling)
    assert res.params == [2, 40]
    assert res.metadata["threads"] == 1
    with pytest.raises(ValueError):
        capability_gap_sweep(task, pool, [2, 2], cfg, ceiling)


def test_report_serializes():
    task, _, h, cfg, ceiling = benchmark_setup(0)
    _, rep = run_csl(task, h, cfg, ceiling)
    d = rep.to_dict()
    assert d["mode"] == "csl" and len(d["rounds"]) == 3
    assert "students" not in d
