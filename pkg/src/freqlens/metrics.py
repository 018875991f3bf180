"""Frequency-domain perturbation metrics: RCT maps and (average) MMD."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .spectral import dct2_forward, level_map

__all__ = [
    "RctMap",
    "MmdConfig",
    "rct",
    "mmd",
    "ammd",
    "median_bandwidth",
    "level_means",
    "band_means",
    "band_mass_fraction",
    "map_to_csv",
    "map_to_pgm",
]


@dataclass
class RctMap:
    """Mean relative DCT change per coefficient, shape (C, H, W).

    ``counts`` holds how many pairs contributed to each entry; pairs whose
    original coefficient is below the threshold are left out of that entry.
    """

    values: np.ndarray
    counts: np.ndarray
    n_samples: int
    tau: float


def _pairs(originals, perturbed) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(originals, dtype=np.float64)
    b = np.asarray(perturbed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    if a.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) batches, got {a.shape}")
    if len(a) == 0:
        raise ValueError("need at least one pair")
    return a, b


def rct(originals, perturbed, tau: float = 1e-8) -> RctMap:
    """Average of ``|(DCT(x') - DCT(x)) / DCT(x)|`` over pairs.

    Entries with ``|DCT(x)| < tau`` are skipped for that pair, and each
    coefficient is averaged over the pairs that did contribute. Entries no
    pair contributed to are 0.
    """
    a, b = _pairs(originals, perturbed)
    da = dct2_forward(a)
    db = dct2_forward(b)
    valid = np.abs(da) >= tau
    rel = np.where(valid, np.abs(db - da) / np.where(valid, np.abs(da), 1.0), 0.0)
    counts = valid.sum(axis=0)
    values = np.where(counts > 0, rel.sum(axis=0) / np.maximum(counts, 1), 0.0)
    return RctMap(values, counts, len(a), tau)


@dataclass(frozen=True)
class MmdConfig:
    """Kernel and sample-space choices for MMD.

    ``sigma=None`` selects the median heuristic. ``sample_space`` is
    ``"pooled"`` (every scalar DCT coefficient of an image is one sample) or
    ``"vectors"`` (each spatial frequency contributes one C-vector).
    """

    sigma: float | None = None
    sample_space: str = "pooled"

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.sample_space not in ("pooled", "vectors"):
            raise ValueError(f"unknown sample space {self.sample_space!r}")


def _as_samples(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or len(s) == 0:
        raise ValueError("sample sets must be non-empty (n,) or (n, d) arrays")
    return s


def median_bandwidth(a, b) -> float:
    """Median pairwise Euclidean distance within ``a`` and ``b`` pooled (1.0 if that is 0)."""
    pooled = np.concatenate([_as_samples(a), _as_samples(b)])
    if len(pooled) < 2:
        return 1.0
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0


def mmd(a, b, sigma: float | None = None) -> float:
    """Biased (V-statistic) MMD with a Gaussian kernel.

    ``MMD^2 = mean k(a, a') + mean k(b, b') - 2 mean k(a, b)`` with
    ``k(u, v) = exp(-||u - v||^2 / (2 sigma^2))``; the square root of the
    clipped value is returned, so the result lies in ``[0, sqrt(2)]``.
    """
    a = _as_samples(a)
    b = _as_samples(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if sigma is None:
        sigma = median_bandwidth(a, b)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    gamma = 1.0 / (2.0 * sigma * sigma)
    kaa = np.exp(-gamma * cdist(a, a, "sqeuclidean")).mean()
    kbb = np.exp(-gamma * cdist(b, b, "sqeuclidean")).mean()
    kab = np.exp(-gamma * cdist(a, b, "sqeuclidean")).mean()
    return float(np.sqrt(max(0.0, kaa + kbb - 2.0 * kab)))


def _coefficient_samples(spec: np.ndarray, space: str) -> np.ndarray:
    if space == "pooled":
        return spec.reshape(-1)
    c = spec.shape[0]
    return spec.reshape(c, -1).T


def ammd(originals, perturbed, cfg: MmdConfig = MmdConfig()) -> float:
    """Mean over pairs of the MMD between the DCT coefficients of ``x`` and ``x'``."""
    a, b = _pairs(originals, perturbed)
    sa = dct2_forward(a)
    sb = dct2_forward(b)
    total = 0.0
    for i in range(len(a)):
        total += mmd(_coefficient_samples(sa[i], cfg.sample_space), _coefficient_samples(sb[i], cfg.sample_space), cfg.sigma)
    return total / len(a)


def level_means(values) -> np.ndarray:
    """Mean of a (C, H, W) or (H, W) map over each anti-diagonal level."""
    v = np.asarray(values, dtype=np.float64)
    h, w = v.shape[-2:]
    v = v.reshape(-1, h, w)
    lv = np.broadcast_to(level_map(h, w), v.shape).ravel()
    sums = np.bincount(lv, weights=v.ravel(), minlength=h + w - 1)
    counts = np.bincount(lv, minlength=h + w - 1)
    return sums / counts


def band_means(values, low_max: int, high_min: int) -> tuple[float, float]:
    """Mean entry over levels ``<= low_max`` and over levels ``>= high_min``."""
    v = np.asarray(values, dtype=np.float64)
    h, w = v.shape[-2:]
    lv = np.broadcast_to(level_map(h, w), v.shape)
    return float(v[lv <= low_max].mean()), float(v[lv >= high_min].mean())


def band_mass_fraction(values, cutoff: float) -> float:
    """Share of total absolute mass of a spectral map at levels ``< cutoff``."""
    v = np.abs(np.asarray(values, dtype=np.float64))
    h, w = v.shape[-2:]
    lv = np.broadcast_to(level_map(h, w), v.shape)
    total = v.sum()
    return float(v[lv < cutoff].sum() / total) if total > 0 else 0.0


def map_to_csv(values, path) -> None:
    """Row-major CSV, one block per channel headed by ``# channel <c>``."""
    from .spectral import spectrum_to_csv

    spectrum_to_csv(values, path)


def map_to_pgm(values, path, channel: int | None = None) -> dict:
    """8-bit binary PGM heatmap with linear min-max scaling.

    Channels are averaged unless ``channel`` is given. The scaling bounds are
    written to ``<path>.json`` and returned. A constant map renders as all 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 3:
        v = v.mean(axis=0) if channel is None else v[channel]
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    pix = np.zeros(v.shape, np.uint8) if span == 0 else np.round((v - lo) / span * 255.0).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pix.tobytes())
    bounds = {"min": lo, "max": hi, "scaling": "linear", "channel": "mean" if channel is None else channel}
    Path(f"{path}.json").write_text(json.dumps(bounds, indent=2))
    return bounds


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
