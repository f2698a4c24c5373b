"""Hot numeric kernels.

The mini-batch SGD loop used by every probe is compiled with numba when it is
available. Setting ``CSL_DISABLE_JIT=1`` selects the pure-numpy path instead;
both paths take identical inputs (including the precomputed shuffles) and
agree to floating-point rounding, but only the selected path is bit-stable.
"""

import os

import numpy as np

_DISABLE = os.environ.get("CSL_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError("jit disabled by CSL_DISABLE_JIT")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"


def sgd_numpy(W, b, X, T, perms, steps_per_epoch, batch_size, lr, momentum, n_steps):
    """Momentum SGD on mean softmax cross-entropy, updating ``W`` and ``b`` in place.

    Returns ``(last_loss, bad_step)`` where ``bad_step`` is -1 unless a
    non-finite loss was hit, in which case training stops at that step.
    """
    N = X.shape[0]
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    loss = 0.0
    for s in range(n_steps):
        e, j = divmod(s, steps_per_epoch)
        idx = perms[e, j * batch_size:min((j + 1) * batch_size, N)]
        x = X[idx]
        t = T[idx]
        z = x @ W.T + b
        m = z.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
        logp = z - lse
        nb = len(idx)
        loss = -(t * logp).sum() / nb
        if not np.isfinite(loss):
            return loss, s
        g = (np.exp(logp) - t) / nb
        vW *= momentum
        vW += g.T @ x
        vb *= momentum
        vb += g.sum(axis=0)
        W -= lr * vW
        b -= lr * vb
    return loss, -1


if HAS_NUMBA:

    # reassociation lets the inner dot products vectorize; nan/inf semantics stay
    # strict so the divergence check still fires
    @njit(cache=True, fastmath={"reassoc", "contract"})
    def _sgd_jit(W, b, X, T, perms, steps_per_epoch, batch_size, lr, momentum, n_steps):
        C, D = W.shape
        N = X.shape[0]
        vW = np.zeros((C, D))
        vb = np.zeros(C)
        gW = np.empty((C, D))
        gb = np.empty(C)
        z = np.empty(C)
        loss = 0.0
        for s in range(n_steps):
            e = s // steps_per_epoch
            j = s - e * steps_per_epoch
            start = j * batch_size
            stop = min(start + batch_size, N)
            nb = stop - start
            gW[:, :] = 0.0
            gb[:] = 0.0
            loss = 0.0
            for r in range(start, stop):
                i = perms[e, r]
                zmax = -np.inf
                for c in range(C):
                    acc = b[c]
                    for d in range(D):
                        acc += W[c, d] * X[i, d]
                    z[c] = acc
                    if acc > zmax:
                        zmax = acc
                sumexp = 0.0
                for c in range(C):
                    sumexp += np.exp(z[c] - zmax)
                lse = zmax + np.log(sumexp)
                for c in range(C):
                    logp = z[c] - lse
                    t = T[i, c]
                    if t != 0.0:
                        loss -= t * logp
                    g = np.exp(logp) - t
                    gb[c] += g
                    for d in range(D):
                        gW[c, d] += g * X[i, d]
            inv = 1.0 / nb
            loss *= inv
            if not np.isfinite(loss):
                return loss, s
            for c in range(C):
                vb[c] = momentum * vb[c] + gb[c] * inv
                b[c] -= lr * vb[c]
                for d in range(D):
                    vW[c, d] = momentum * vW[c, d] + gW[c, d] * inv
                    W[c, d] -= lr * vW[c, d]
        return loss, -1

    def sgd(W, b, X, T, perms, steps_per_epoch, batch_size, lr, momentum, n_steps):
        loss, bad = _sgd_jit(W, b, X, T, perms, steps_per_epoch, batch_size,
                             float(lr), float(momentum), n_steps)
        return float(loss), int(bad)

else:
    sgd = sgd_numpy


def thread_count() -> int:
    # kernels are serial; recorded in reports so bit-exactness claims are scoped
    return 1
