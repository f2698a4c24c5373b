import numpy as np
import pytest

from csl import _kernels


def _problem(seed, n=37, d=5, c=4, soft=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if soft:
        T = rng.dirichlet(np.ones(c), n)
    else:
        T = np.eye(c)[rng.integers(0, c, n)]
    W = rng.uniform(-0.5, 0.5, (c, d))
    b = np.zeros(c)
    bs = 8
    spe = -(-n // bs)
    perms = np.stack([rng.permutation(n) for _ in range(3)])
    return W, b, X, T, perms, spe, bs


@pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not installed or disabled")
@pytest.mark.parametrize("soft", [False, True])
def test_jit_matches_numpy(soft):
    W, b, X, T, perms, spe, bs = _problem(1, soft=soft)
    W1, b1, W2, b2 = W.copy(), b.copy(), W.copy(), b.copy()
    l1, bad1 = _kernels.sgd_numpy(W1, b1, X, T, perms, spe, bs, 0.1, 0.9, 3 * spe - 2)
    l2, bad2 = _kernels.sgd(W2, b2, X, T, perms, spe, bs, 0.1, 0.9, 3 * spe - 2)
    assert bad1 == bad2 == -1
    np.testing.assert_allclose(W1, W2, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(b1, b2, rtol=1e-10, atol=1e-12)
    assert l1 == pytest.approx(l2, rel=1e-10)


def test_numpy_sgd_single_step_matches_manual_update():
    W, b, X, T, perms, spe, bs = _problem(2)
    W0, b0 = W.copy(), b.copy()
    _kernels.sgd_numpy(W, b, X, T, perms, spe, bs, 0.5, 0.9, 1)
    idx = perms[0, :bs]
    z = X[idx] @ W0.T + b0
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    g = (p - T[idx]) / bs
    np.testing.assert_allclose(W, W0 - 0.5 * g.T @ X[idx], atol=1e-12)
    np.testing.assert_allclose(b, b0 - 0.5 * g.sum(0), atol=1e-12)


def test_backend_name():
    assert _kernels.backend() in ("numba", "numpy")
    assert _kernels.thread_count() == 1
