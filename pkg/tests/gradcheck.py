"""Central-difference gradient checking shared by the tensor and acceptance tests."""

import numpy as np

from freqlens import tensor as T


def numeric_grad(f, x, coords, h=1e-4):
    """Central differences of scalar ``f`` at the given flat coordinates of ``x``."""
    out = []
    for i in coords:
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        out.append((f(xp) - f(xm)) / (2 * h))
    return np.array(out)


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(b))))


def check(fn, *arrays, n_coords=20, seed=0):
    """Gradient of ``fn(*tensors)`` (scalar) vs central differences, for every argument."""
    rng = np.random.default_rng(seed)
    leaves = [T.Tensor(a) for a in arrays]
    grads = T.backward(fn(*leaves), leaves)
    worst = 0.0
    for k, a in enumerate(arrays):
        coords = rng.choice(a.size, size=min(n_coords, a.size), replace=False)

        def f(v, k=k):
            args = list(arrays)
            args[k] = v
            return float(fn(*[T.Tensor(x) for x in args]).data)

        worst = max(worst, rel_err(grads[k].flat[coords], numeric_grad(f, a, coords)))
    return worst


def readout(t):
    """Fixed random linear readout so every output entry gets a distinct adjoint."""
    w = np.random.default_rng(t.data.size).normal(size=t.shape)
    return T.weighted_sum(t, w)
