import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import blobs
from csl.probe import (LinearHead, Predictions, TrainConfig, TrainingError, distance, evaluate_topk, forward,
                       head_from_bytes, init_head, load_head, loss_and_grad, rank_of, save_head, softmax,
                       topk_classes, train_probe)
from csl.store import EmbeddingDataset


def fd_grad(head, x, t, h=1e-4):
    gw = np.zeros_like(head.weights)
    gb = np.zeros_like(head.bias)
    for idx in np.ndindex(*head.weights.shape):
        for sign in (1, -1):
            w = head.weights.copy()
            w[idx] += sign * h
            gw[idx] += sign * loss_and_grad(LinearHead(w, head.bias), x, t)[0]
    for c in range(len(head.bias)):
        for sign in (1, -1):
            b = head.bias.copy()
            b[c] += sign * h
            gb[c] += sign * loss_and_grad(LinearHead(head.weights, b), x, t)[0]
    return gw / (2 * h), gb / (2 * h)


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8)


@pytest.mark.parametrize("soft", [False, True])
def test_gradient_matches_finite_differences(soft):
    rng = np.random.default_rng(7 + soft)
    for _ in range(20):
        C, D, n = rng.integers(2, 6), rng.integers(1, 6), rng.integers(1, 9)
        head = LinearHead(rng.standard_normal((C, D)), rng.standard_normal(C))
        x = rng.standard_normal((n, D))
        t = rng.dirichlet(np.ones(C), n) if soft else rng.integers(0, C, n)
        _, g = loss_and_grad(head, x, t)
        gw, gb = fd_grad(head, x, t)
        assert rel_err(g.weights, gw) < 1e-4
        assert rel_err(g.bias, gb) < 1e-4


def test_loss_ln2_case():
    head = LinearHead(np.zeros((2, 3)), np.zeros(2))
    loss, _ = loss_and_grad(head, np.ones((4, 3)), [0, 1, 1, 0])
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_softmax_stable_and_normalized():
    z = np.array([[1e4, 0.0, -1e4], [0.0, 0.0, 0.0], [-1e4, -1e4 + 1, -1e4]])
    p = softmax(z)
    assert np.isfinite(p).all()
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-9
    np.testing.assert_allclose(p[0], [1, 0, 0])
    np.testing.assert_allclose(p[1], [1 / 3] * 3)


@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=20), st.floats(0.05, 20))
@settings(max_examples=100, deadline=None)
def test_softmax_normalization_property(row, temp):
    p = softmax(np.array([row]), temp)
    assert abs(p.sum() - 1) < 1e-9 and (p >= 0).all()


def test_temperature_flattens():
    z = np.array([[2.0, 0.0]])
    assert softmax(z, 4.0)[0, 0] < softmax(z, 1.0)[0, 0]


def test_training_is_deterministic():
    ds = blobs(classes=3, dim=3)
    cfg = TrainConfig(epochs=3, batch_size=16, seed=5)
    assert train_probe(ds, cfg).to_bytes() == train_probe(ds, cfg).to_bytes()
    assert train_probe(ds, cfg).to_bytes() != train_probe(ds, TrainConfig(epochs=3, batch_size=16,
                                                                          seed=6)).to_bytes()


def test_separable_reaches_high_accuracy():
    ds = blobs(n_per_class=100, classes=4, dim=4, margin=5.0)
    head = train_probe(ds, TrainConfig(epochs=10, batch_size=32))
    assert evaluate_topk(head, ds) >= 0.99


def test_max_steps_zero_returns_init():
    ds = blobs()
    head = train_probe(ds, TrainConfig(max_steps=0, seed=3))
    assert head.equals(init_head(2, 2, 3))


def test_full_batch_loss_decreases():
    ds = blobs(n_per_class=30, classes=3, dim=3, margin=2.0, sigma=1.0)
    cfg_base = dict(batch_size=ds.n, momentum=0.0, learning_rate=0.1, epochs=10)
    losses = []
    for s in range(11):
        head = train_probe(ds, TrainConfig(max_steps=s, **cfg_base))
        losses.append(loss_and_grad(head, ds.features, ds.labels)[0])
    # float32 rounding of the stored head adds ~1e-7 noise
    assert all(b < a + 1e-6 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_soft_targets_train():
    ds = blobs(classes=2, dim=2)
    soft = np.where(ds.labels[:, None] == np.arange(2), 0.9, 0.1)
    head = train_probe(ds, TrainConfig(epochs=5, label_mode="soft"), targets=soft)
    assert evaluate_topk(head, ds) >= 0.99


def test_label_mode_mismatch_rejected():
    ds = blobs()
    with pytest.raises(ValueError):
        train_probe(ds, TrainConfig(label_mode="soft"), targets=ds.labels)
    with pytest.raises(ValueError):
        train_probe(ds, TrainConfig(label_mode="soft"), targets=np.full((ds.n, 2), 0.7))


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_reported():
    ds = blobs(margin=1.0, sigma=2.0)
    with pytest.raises(TrainingError, match="non-finite"):
        train_probe(ds, TrainConfig(learning_rate=1e300, epochs=5, batch_size=4))


def test_head_roundtrip(tmp_path):
    ds = blobs(classes=3, dim=4)
    head = train_probe(ds, TrainConfig(epochs=2))
    save_head(head, tmp_path / "h.cslh")
    back = load_head(tmp_path / "h.cslh")
    assert back.equals(head)
    assert back.to_bytes() == head.to_bytes()
    with pytest.raises(ValueError):
        head_from_bytes(b"NOPE" + head.to_bytes()[4:])
    with pytest.raises(ValueError):
        head_from_bytes(head.to_bytes()[:-1])


def test_topk_and_ties():
    p = np.array([[0.1, 0.4, 0.4, 0.1], [0.25, 0.25, 0.25, 0.25]])
    np.testing.assert_array_equal(topk_classes(p, 2), [[1, 2], [0, 1]])
    np.testing.assert_array_equal(rank_of(p, np.array([2, 3])), [1, 3])
    np.testing.assert_array_equal(Predictions(np.log(p), p).top1, [1, 0])


def test_evaluate_topk():
    head = LinearHead(np.eye(3), np.zeros(3))
    ds = EmbeddingDataset(np.eye(3)[[0, 1, 2, 0]] * np.array([[1], [1], [1], [0.0]]), [0, 1, 2, 2], None, 3, 1)
    # last row has all-equal logits, so class 2 ranks last
    assert evaluate_topk(head, ds, 1) == 0.75
    assert evaluate_topk(head, ds, 3) == 1.0
    with pytest.raises(ValueError):
        evaluate_topk(head, ds, 4)


def test_distance_cases():
    assert distance(1, 1) == 0.0 and distance(1, 2) == 1.0
    assert distance(0, np.array([0.5, 0.5])) == pytest.approx(math.log(2))
    assert distance(np.array([0.5, 0.5]), 0) == pytest.approx(math.log(2))
    assert distance(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2))
    assert distance(0, np.array([0.0, 1.0])) == pytest.approx(-math.log(1e-12))
    d = distance(np.array([0, 1]), np.array([[0.9, 0.1], [0.9, 0.1]]))
    np.testing.assert_allclose(d, [-math.log(0.9), -math.log(0.1)])
    pred = forward(LinearHead(np.zeros((2, 1)), np.zeros(2)), np.zeros((3, 1)))
    np.testing.assert_allclose(distance(np.array([0, 1, 0]), pred), math.log(2))


def test_forward_rejects_wrong_dim():
    with pytest.raises(ValueError):
        forward(LinearHead(np.zeros((2, 3)), np.zeros(2)), np.zeros((4, 2)))


def test_config_validation():
    for bad in (dict(epochs=0), dict(learning_rate=0), dict(momentum=1.0), dict(label_mode="x"),
                dict(max_steps=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
