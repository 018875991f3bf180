"""Discrete transforms and frequency-level bookkeeping.

Two conventions live here side by side:

* the unnormalized 1-D DFT, ``X_k = sum_i x_i exp(-2j*pi*k*i/d)``, whose DC
  term is the plain sum of the signal (used by the l1 lower-bound check), and
* the orthonormal separable 2-D DCT-II, used for every image-level analysis
  in the package (RCT maps, AMMD, occlusion, counterpart differences).

Transforms are direct matrix products against cached basis matrices. Image
sizes in this package are small (<= 64 per side), so nothing faster is needed.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "FrequencyLevel",
    "BoundCheck",
    "dft_forward",
    "dft_inverse",
    "dft_coefficient",
    "fourier_basis_sum",
    "dct_matrix",
    "dct2_forward",
    "dct2_inverse",
    "dct_basis_image",
    "l1_lower_bound_check",
    "frequency_levels",
    "level_map",
    "level_energy",
    "spectrum_to_csv",
    "spectrum_from_csv",
]


@dataclass(frozen=True)
class FrequencyLevel:
    """One anti-diagonal of the DCT grid: every ``(u, v)`` with ``u + v == level``."""

    level: int
    members: tuple[tuple[int, int], ...]


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def _as_signal(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("empty signal")
    return x


@functools.lru_cache(maxsize=64)
def _dft_matrix(d: int, sign: int) -> np.ndarray:
    k = np.arange(d)
    # k*i mod d keeps the phase argument small, which keeps the error small
    phase = (np.outer(k, k) % d) * (2.0 * np.pi / d)
    m = np.exp(sign * 1j * phase)
    m.setflags(write=False)
    return m


def dft_forward(x) -> np.ndarray:
    """Unnormalized forward DFT of a real or complex 1-D signal.

    ``X[0]`` is the sum of the samples.
    """
    x = _as_signal(x)
    return _dft_matrix(x.size, -1) @ x.astype(complex)


def dft_coefficient(x, k: int) -> complex:
    """Single coefficient ``X[k]`` of :func:`dft_forward`, in O(d)."""
    x = _as_signal(x)
    d = x.size
    phase = ((k % d) * np.arange(d) % d) * (2.0 * np.pi / d)
    return complex(np.sum(x * np.exp(-1j * phase)))


def dft_inverse(X) -> np.ndarray:
    """Inverse of :func:`dft_forward` (carries the ``1/d`` factor).

    Returns a complex array; take ``.real`` for spectra of real signals.
    """
    X = _as_signal(X)
    return (_dft_matrix(X.size, 1) @ X.astype(complex)) / X.size


def fourier_basis_sum(d: int, k: int) -> complex:
    """Sum ``exp(2j*pi*k*i/d)`` for ``i = 0 .. d-1`` by direct summation.

    Equals ``d`` when ``k`` is a multiple of ``d`` and vanishes otherwise.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    i = np.arange(d)
    return complex(np.sum(np.exp(2j * np.pi * ((k * i) % d) / d)))


@functools.lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``M`` (rows are basis vectors), so ``M @ M.T == I``."""
    if n < 1:
        raise ValueError(f"size must be >= 1, got {n}")
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def _check_image_like(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or min(a.shape) < 1:
        raise ValueError(f"expected an array of shape (..., H, W) with H, W >= 1, got {a.shape}")
    return a


def dct2_forward(img) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the last two axes.

    Works on a single ``(H, W)`` plane, a ``(C, H, W)`` image or a
    ``(N, C, H, W)`` batch; leading axes are transformed independently.
    """
    img = _check_image_like(img)
    mh = dct_matrix(img.shape[-2])
    mw = dct_matrix(img.shape[-1])
    return mh @ img @ mw.T


def dct2_inverse(spec, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Inverse (adjoint) of :func:`dct2_forward`.

    Args:
        spec: Coefficients with the frequency grid on the last two axes.
        shape: Expected shape of the reconstructed image. A mismatch raises.
    """
    spec = _check_image_like(spec)
    if shape is not None and tuple(shape) != spec.shape:
        raise ValueError(f"spectrum shape {spec.shape} does not match image shape {tuple(shape)}")
    mh = dct_matrix(spec.shape[-2])
    mw = dct_matrix(spec.shape[-1])
    return mh.T @ spec @ mw


def dct_basis_image(shape: tuple[int, int, int], channel: int, u: int, v: int) -> np.ndarray:
    """Unit-norm pixel-space image of a single DCT coefficient."""
    c, h, w = shape
    mh = dct_matrix(h)
    mw = dct_matrix(w)
    out = np.zeros(shape)
    out[channel] = np.outer(mh[u], mw[v])
    return out


def l1_lower_bound_check(x, x_prime, atol: float = 1e-9) -> BoundCheck:
    """Check ``||x - x'||_1 >= |X_0 - X'_0|`` on the flattened images.

    ``X_0`` is the DC term of the unnormalized DFT, i.e. the pixel sum.
    """
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_prime.shape}")
    a = x.ravel()
    b = x_prime.ravel()
    lhs = float(np.sum(np.abs(a - b)))
    rhs = float(abs(dft_coefficient(a, 0) - dft_coefficient(b, 0)))
    return BoundCheck(lhs, rhs, lhs >= rhs - atol)


def frequency_levels(h: int, w: int) -> list[FrequencyLevel]:
    """Anti-diagonal levels ``0 .. h+w-2`` of an ``h`` x ``w`` DCT grid, ascending."""
    if h < 1 or w < 1:
        raise ValueError(f"dimensions must be >= 1, got ({h}, {w})")
    levels = []
    for ell in range(h + w - 1):
        members = tuple((u, ell - u) for u in range(max(0, ell - w + 1), min(h - 1, ell) + 1))
        levels.append(FrequencyLevel(ell, members))
    return levels


def level_map(h: int, w: int) -> np.ndarray:
    """``(h, w)`` integer array holding ``u + v`` at each coefficient."""
    if h < 1 or w < 1:
        raise ValueError(f"dimensions must be >= 1, got ({h}, {w})")
    return np.add.outer(np.arange(h), np.arange(w))


def level_energy(spec) -> np.ndarray:
    """Squared-coefficient energy per frequency level, summed over channels."""
    spec = _check_image_like(spec)
    h, w = spec.shape[-2:]
    energy = (spec**2).reshape(-1, h, w).sum(axis=0)
    return np.bincount(level_map(h, w).ravel(), weights=energy.ravel(), minlength=h + w - 1)


def spectrum_to_csv(spec, path) -> None:
    """Write a ``(C, H, W)`` spectrum as CSV, one row-major block per channel.

    Each block starts with a ``# channel <c>`` line; blocks are separated by a
    blank line.
    """
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim == 2:
        spec = spec[None]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for c, plane in enumerate(spec):
            if c:
                fh.write("\n")
            fh.write(f"# channel {c}\n")
            for row in plane:
                writer.writerow([repr(float(v)) for v in row])


def spectrum_from_csv(path) -> np.ndarray:
    blocks: list[list[list[float]]] = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# channel"):
                blocks.append([])
            elif line:
                blocks[-1].append([float(v) for v in line.split(",")])
    return np.array(blocks)
