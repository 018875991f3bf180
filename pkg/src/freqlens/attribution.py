"""Occluded Frequency attribution.

A frequency level (all DCT coefficients with ``u + v == level``, in every
channel) is replaced by a baseline, the image is transformed back, and the
drop in the class logit is the level's score. Occluded images are fed to the
network without clamping: clipping to [0, 1] would leak energy back into
other frequencies.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rng import substream
from .spectral import dct2_forward, dct2_inverse, level_map

__all__ = [
    "AttributionProfile",
    "occlude_level",
    "of_score",
    "attribution_profile",
    "class_average_profiles",
    "band_share",
    "low_band_cutoff",
    "profile_to_csv",
    "grouped_profiles_to_csv",
]

RANDOM_DRAWS = 8


@dataclass
class AttributionProfile:
    scores: np.ndarray
    class_index: int
    baseline: str
    n_samples: int = 1

    @property
    def subject(self) -> str:
        return "image" if self.n_samples == 1 else f"class average of {self.n_samples}"


def _check_level(level: int, h: int, w: int) -> None:
    if not 0 <= level <= h + w - 2:
        raise ValueError(f"level {level} outside [0, {h + w - 2}]")


def _occlude_spectrum(spec: np.ndarray, level: int, baseline: str, rng) -> np.ndarray:
    h, w = spec.shape[-2:]
    mask = np.broadcast_to(level_map(h, w) == level, spec.shape)
    out = spec.copy()
    if baseline == "zero":
        out[mask] = 0.0
    elif baseline == "random":
        rms = np.sqrt(np.mean(spec[mask] ** 2))
        out[mask] = rng.normal(0.0, rms, int(mask.sum()))
    else:
        raise ValueError(f"baseline must be 'zero' or 'random', got {baseline!r}")
    return out


def occlude_level(img, level: int, baseline: str = "zero", rng: np.random.Generator | None = None) -> np.ndarray:
    """Replace one frequency level of a (C, H, W) image with a baseline.

    The ``"random"`` baseline draws Gaussian coefficients whose scale is the
    root-mean-square of the level's own coefficients. The result is not
    clipped to [0, 1].
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    _check_level(level, h, w)
    if rng is None:
        rng = substream(0, "attribution-baseline")
    return dct2_inverse(_occlude_spectrum(dct2_forward(img), level, baseline, rng))


def _occluded_stack(img: np.ndarray, baseline: str, draws: int, rng) -> np.ndarray:
    """All levels occluded, shape (levels * draws, C, H, W), level-major."""
    h, w = img.shape[-2:]
    spec = dct2_forward(img)
    stack = [
        _occlude_spectrum(spec, level, baseline, rng)
        for level in range(h + w - 1)
        for _ in range(draws)
    ]
    return dct2_inverse(np.stack(stack))


def _draws(baseline: str, n_draws: int | None) -> int:
    if baseline == "zero":
        return 1
    return RANDOM_DRAWS if n_draws is None else n_draws


def of_score(net, img, c: int, level: int, baseline: str = "zero", seed: int = 0, n_draws: int | None = None) -> float:
    """Logit of class ``c`` on the image minus its logit with ``level`` occluded.

    For the random baseline the occluded logit is averaged over draws.
    """
    img = np.asarray(img, dtype=np.float64)
    if not 0 <= c < net.num_classes:
        raise ValueError(f"class {c} outside [0, {net.num_classes})")
    _check_level(level, *img.shape[-2:])
    rng = substream(seed, "attribution-baseline")
    draws = _draws(baseline, n_draws)
    occluded = np.stack([occlude_level(img, level, baseline, rng) for _ in range(draws)])
    logits = net.forward_logits(np.concatenate([img[None], occluded]))
    return float(logits[0, c] - logits[1:, c].mean())


def attribution_profile(net, img, c: int, baseline: str = "zero", seed: int = 0, n_draws: int | None = None) -> AttributionProfile:
    """Occlusion score of every frequency level, lowest level first."""
    img = np.asarray(img, dtype=np.float64)
    if not 0 <= c < net.num_classes:
        raise ValueError(f"class {c} outside [0, {net.num_classes})")
    h, w = img.shape[-2:]
    draws = _draws(baseline, n_draws)
    rng = substream(seed, "attribution-baseline")
    stack = _occluded_stack(img, baseline, draws, rng)
    logits = net.forward_logits(np.concatenate([img[None], stack]))
    occluded = logits[1:, c].reshape(h + w - 1, draws).mean(axis=1)
    return AttributionProfile(logits[0, c] - occluded, int(c), baseline)


def class_average_profiles(
    net, images, labels, baseline: str = "zero", classes=None, seed: int = 0, threads: int = 1
) -> dict[int, AttributionProfile]:
    """Mean profile per class, each image scored against its own label.

    Image ``i`` uses baseline seed ``seed + i``, so results do not depend on
    ``threads``.

    Args:
        classes: Classes to report; defaults to those present in ``labels``.
        threads: Worker threads for the per-image profiles.

    Raises:
        ValueError: A requested class has no images.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if classes is None:
        classes = sorted(set(labels.tolist()))
    groups = {}
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise ValueError(f"class {c} has no images")
        groups[int(c)] = idx

    def one(i: int) -> np.ndarray:
        return attribution_profile(net, images[i], int(labels[i]), baseline, seed=seed + i).scores

    needed = sorted(int(i) for idx in groups.values() for i in idx)
    if threads > 1 and len(needed) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = dict(zip(needed, pool.map(one, needed)))
    else:
        scores = {i: one(i) for i in needed}
    return {
        c: AttributionProfile(np.mean([scores[int(i)] for i in idx], axis=0), c, baseline, int(idx.size))
        for c, idx in groups.items()
    }


def low_band_cutoff(h: int, w: int) -> float:
    """Levels strictly below this value form the low band."""
    return (h + w - 1) / 3.0


def band_share(scores, cutoff: float) -> float:
    """Share of total ``|score|`` mass on levels ``< cutoff``."""
    s = np.abs(np.asarray(scores, dtype=np.float64))
    total = s.sum()
    if total == 0:
        return 0.0
    return float(s[np.arange(s.size) < cutoff].sum() / total)


def profile_to_csv(profile: AttributionProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "score"])
        for level, score in enumerate(profile.scores):
            writer.writerow([level, repr(float(score))])


def grouped_profiles_to_csv(profiles: dict[str, dict[int, AttributionProfile]], path, class_names=None) -> None:
    """One row per (class, level) with a score column per model, for grouped bar plots."""
    models = list(profiles)
    classes = sorted(set().union(*(p.keys() for p in profiles.values())))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "level", *models])
        for c in classes:
            name = class_names[c] if class_names is not None else c
            n_levels = max(profiles[m][c].scores.size for m in models if c in profiles[m])
            for level in range(n_levels):
                row = [repr(float(profiles[m][c].scores[level])) if c in profiles[m] else "" for m in models]
                writer.writerow([name, level, *row])
