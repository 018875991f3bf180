"""Robust / non-robust counterparts by representation matching.

Starting from another image of the dataset, ``x_r`` is pushed by gradient
descent until ``||g(x_r) - g(x)||_2`` is small, where ``g`` is a
representation map (by default a network's pooled activation). Counterparts
of an adversarially trained network are "robust", those of a standard
network "non-robust".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .rng import substream
from .spectral import dct2_forward

__all__ = [
    "RobustGenConfig",
    "generate_counterpart",
    "generate_counterparts",
    "counterpart_spectrum_diff",
]

Representation = Callable[[T.Tensor], T.Tensor]


@dataclass(frozen=True)
class RobustGenConfig:
    iterations: int = 500
    step_size: float = 1.0
    seed: int = 0
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")


def _objective_and_grad(represent: Representation, x_r: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xt = T.Tensor(x_r)
    diff = T.add(represent(xt), T.Tensor(-target))
    norms = T.l2_norms(diff)
    (g,) = T.backward(T.weighted_sum(norms, np.ones(len(x_r))), [xt])
    return norms.data, g


def generate_counterparts(
    represent: Representation,
    images,
    pool=None,
    cfg: RobustGenConfig = RobustGenConfig(),
    init=None,
    first_index: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Match representations for a batch of images.

    Each image keeps its own step size. A proposal that raises the objective
    is rejected and that image's step is halved; an accepted proposal grows
    it by 10%. Iterates are clamped to [0, 1].

    Args:
        represent: Tensor-to-tensor map giving an (N, D) representation.
        images: Targets ``x``, shape (N, C, H, W).
        pool: Images to draw starting points from (required without ``init``).
            Image ``i`` starts from a pool image picked by the
            ``(cfg.seed, first_index + i)`` substream.
        init: Explicit starting points, shape (N, C, H, W).
        first_index: Global index of the first image, so that a batch split
            into pieces picks the same starting points as the whole.

    Returns:
        Counterparts, final objectives, and the pool index each started from
        (-1 when ``init`` was given).
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected (N, C, H, W), got {x.shape}")
    n = len(x)
    if init is not None:
        x_r = np.clip(np.asarray(init, dtype=np.float64).copy(), 0.0, 1.0)
        starts = np.full(n, -1)
    else:
        if pool is None or len(pool) == 0:
            raise ValueError("a non-empty pool is needed to pick starting images")
        pool = np.asarray(pool, dtype=np.float64)
        starts = np.array([substream(cfg.seed, f"robustgen/{first_index + i}").integers(len(pool)) for i in range(n)])
        x_r = pool[starts].copy()
    if x_r.shape != x.shape:
        raise ValueError(f"starting points {x_r.shape} do not match images {x.shape}")

    target = represent(T.Tensor(x)).data
    obj, grad = _objective_and_grad(represent, x_r, target)
    if not np.all(np.isfinite(obj)):
        raise FloatingPointError("non-finite objective")
    step = np.full(n, cfg.step_size)
    bshape = (-1,) + (1,) * (x.ndim - 1)
    for _ in range(cfg.iterations):
        live = obj > cfg.tolerance
        if not live.any():
            break
        proposal = np.where(live.reshape(bshape), np.clip(x_r - step.reshape(bshape) * grad, 0.0, 1.0), x_r)
        new_obj, new_grad = _objective_and_grad(represent, proposal, target)
        if not np.all(np.isfinite(new_obj)):
            raise FloatingPointError("non-finite objective")
        accept = live & (new_obj < obj)
        x_r = np.where(accept.reshape(bshape), proposal, x_r)
        obj = np.where(accept, new_obj, obj)
        grad = np.where(accept.reshape(bshape), new_grad, grad)
        step = np.where(accept, step * 1.1, np.where(live, step * 0.5, step))
    return x_r, obj, starts


def generate_counterpart(represent: Representation, x, pool=None, cfg: RobustGenConfig = RobustGenConfig(), init=None) -> tuple[np.ndarray, float]:
    """Single-image form of :func:`generate_counterparts`; returns ``(x_r, objective)``."""
    x = np.asarray(x, dtype=np.float64)
    x_r, obj, _ = generate_counterparts(represent, x[None], pool, cfg, None if init is None else np.asarray(init)[None])
    return x_r[0], float(obj[0])


def counterpart_spectrum_diff(originals, counterparts) -> np.ndarray:
    """Mean ``|DCT(x_r) - DCT(x)|`` over pairs, shape (C, H, W)."""
    a = np.asarray(originals, dtype=np.float64)
    b = np.asarray(counterparts, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    if len(a) == 0:
        raise ValueError("need at least one pair")
    return np.abs(dct2_forward(b) - dct2_forward(a)).mean(axis=0)
