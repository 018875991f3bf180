"""Labeled image batches: CIFAR-10 binary loading, synthetic shapes, FQL1 files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FormatError",
    "LabeledDataset",
    "SyntheticSpec",
    "CIFAR10_CLASSES",
    "load_cifar10",
    "synthesize",
    "save_batch",
    "load_batch",
]

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
_CIFAR_RECORD = 1 + 3 * 32 * 32
_LUMA = np.array([0.299, 0.587, 0.114])

_FQL_MAGIC = b"FQL1"
_FQL_HEADER = struct.Struct("<4s5I")  # magic, N, C, H, W, K


class FormatError(ValueError):
    """A data file does not follow its declared binary layout."""


@dataclass(frozen=True)
class LabeledDataset:
    """Images of shape (N, C, H, W) in [0, 1] with integer labels in [0, K)."""

    images: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {images.shape}")
        if images.shape[0] != labels.size:
            raise ValueError(f"{images.shape[0]} images but {labels.size} labels")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        names = tuple(self.class_names)
        if not names:
            k = int(labels.max()) + 1 if labels.size else 0
            names = tuple(f"class_{i}" for i in range(k))
        if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
            raise ValueError(f"labels must lie in [0, {len(names)})")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def take(self, indices) -> LabeledDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices], self.class_names)

    def head(self, n: int) -> LabeledDataset:
        return self.take(np.arange(min(n, len(self))))

    def split(self, n_first: int) -> tuple[LabeledDataset, LabeledDataset]:
        idx = np.arange(len(self))
        return self.take(idx[:n_first]), self.take(idx[n_first:])

    def shuffled(self, rng: np.random.Generator) -> LabeledDataset:
        return self.take(rng.permutation(len(self)))


def _cifar_files(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.bin"))
        if not files:
            raise FileNotFoundError(f"no .bin files in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(path)
    return [path]


def load_cifar10(
    path,
    classes: Sequence[int] | None = None,
    limit: int | None = None,
    grayscale: bool = False,
    relabel: bool = True,
) -> LabeledDataset:
    """Read CIFAR-10 binary batches.

    Each record is one label byte followed by the 1024 red, 1024 green and
    1024 blue bytes of a 32x32 image, row-major. Pixels are scaled by 1/255.

    Args:
        path: A ``*.bin`` batch file, or a directory whose ``*.bin`` files are
            read in sorted order.
        classes: Keep only these labels. With ``relabel`` they are renumbered
            ``0 .. len(classes)-1`` in the given order.
        limit: Keep at most this many records (after class filtering), in
            file order.
        grayscale: Collapse RGB to one luma channel (ITU-R 601 weights).

    Raises:
        FormatError: A file size is not a multiple of 3073 bytes or a label
            byte is >= 10.
    """
    chunks = []
    for f in _cifar_files(path):
        raw = f.read_bytes()
        if len(raw) % _CIFAR_RECORD:
            raise FormatError(f"{f}: {len(raw)} bytes is not a whole number of {_CIFAR_RECORD}-byte records")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD))
    records = np.concatenate(chunks) if chunks else np.zeros((0, _CIFAR_RECORD), np.uint8)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        raise FormatError(f"label byte {labels.max()} out of range")

    names = CIFAR10_CLASSES
    if classes is not None:
        classes = [int(c) for c in classes]
        keep = np.isin(labels, classes)
        records, labels = records[keep], labels[keep]
        if relabel:
            lookup = {c: i for i, c in enumerate(classes)}
            labels = np.array([lookup[int(l)] for l in labels], dtype=np.int64)
            names = tuple(CIFAR10_CLASSES[c] for c in classes)
    if limit is not None:
        records, labels = records[:limit], labels[:limit]

    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    if grayscale:
        images = np.clip(np.tensordot(images, _LUMA, axes=([1], [0]))[:, None], 0.0, 1.0)
    return LabeledDataset(images, labels, names)


@dataclass(frozen=True)
class SyntheticSpec:
    """Procedural shapes dataset: one geometric shape per class on a dark background."""

    classes: tuple[str, ...] = ("disk", "square", "cross", "stripes")
    size: int = 16
    samples_per_class: int = 500
    noise_std: float = 0.1
    background: float = 0.0
    contrast: float = 1.0
    channels: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0.0 <= self.background <= self.background + self.contrast <= 1.0:
            raise ValueError("background and background + contrast must lie in [0, 1]")
        unknown = set(self.classes) - set(_SHAPES)
        if unknown:
            raise ValueError(f"unknown shape kinds: {sorted(unknown)}")


def _disk(yy, xx, cy, cx, r, rng):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _square(yy, xx, cy, cx, r, rng):
    half = 0.8 * r
    return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)


def _cross(yy, xx, cy, cx, r, rng):
    t = max(1.0, r / 3.0)
    return ((np.abs(yy - cy) <= t) & (np.abs(xx - cx) <= r)) | ((np.abs(xx - cx) <= t) & (np.abs(yy - cy) <= r))


def _stripes(yy, xx, cy, cx, r, rng):
    period = rng.integers(3, 6)
    coord = yy if rng.random() < 0.5 else xx
    inside = (np.abs(yy - cy) <= 1.2 * r) & (np.abs(xx - cx) <= 1.2 * r)
    return inside & (((coord - cy) // period) % 2 == 0)


_SHAPES = {"disk": _disk, "square": _square, "cross": _cross, "stripes": _stripes}


def synthesize(spec: SyntheticSpec = SyntheticSpec()) -> LabeledDataset:
    """Generate a reproducible shapes dataset (a pure function of ``spec``).

    Samples are interleaved by class. With ``noise_std == 0`` every pixel is
    exactly ``background`` or ``background + contrast``.
    """
    rng = np.random.default_rng(spec.seed)
    s = spec.size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    n = spec.samples_per_class * len(spec.classes)
    images = np.zeros((n, spec.channels, s, s))
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        label = i % len(spec.classes)
        r = rng.uniform(s / 5.0, s / 3.0)
        cy, cx = rng.uniform(r, s - 1 - r, size=2)
        mask = _SHAPES[spec.classes[label]](yy, xx, cy, cx, r, rng)
        img = np.broadcast_to(spec.background + spec.contrast * mask, (spec.channels, s, s))
        if spec.noise_std > 0:
            img = np.clip(img + rng.normal(0.0, spec.noise_std, img.shape), 0.0, 1.0)
        images[i] = img
        labels[i] = label
    return LabeledDataset(images, labels, tuple(spec.classes))


def save_batch(dataset: LabeledDataset, path, provenance: dict | None = None) -> None:
    """Write ``dataset`` in the FQL1 layout.

    Layout (little-endian): ``b"FQL1"``, u32 N, C, H, W, K, then N*C*H*W
    float64 pixels, then N u16 labels. A ``<path>.json`` sidecar with the
    class names and any ``provenance`` entries is written alongside.
    """
    n = len(dataset)
    c, h, w = dataset.image_shape
    k = dataset.num_classes
    for name, value in (("N", n), ("C", c), ("H", h), ("W", w), ("K", k)):
        if value >= 2**32:
            raise FormatError(f"dimension {name}={value} does not fit in u32")
    if k > 2**16:
        raise FormatError(f"{k} classes do not fit u16 labels")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_FQL_HEADER.pack(_FQL_MAGIC, n, c, h, w, k))
        fh.write(dataset.images.astype("<f8").tobytes())
        fh.write(dataset.labels.astype("<u2").tobytes())
    sidecar = {"format": "FQL1", "class_names": list(dataset.class_names)}
    if provenance:
        sidecar["provenance"] = provenance
    Path(f"{path}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_batch(path) -> LabeledDataset:
    """Read an FQL1 file written by :func:`save_batch`.

    Raises:
        FormatError: Bad magic, or header dimensions inconsistent with the
            file size.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _FQL_HEADER.size:
        raise FormatError(f"{path}: file too short for an FQL1 header")
    magic, n, c, h, w, k = _FQL_HEADER.unpack_from(raw)
    if magic != _FQL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n_pix = n * c * h * w
    expected = _FQL_HEADER.size + 8 * n_pix + 2 * n
    if expected != len(raw):
        raise FormatError(f"{path}: header declares {expected} bytes, file has {len(raw)}")
    offset = _FQL_HEADER.size
    images = np.frombuffer(raw, dtype="<f8", count=n_pix, offset=offset).reshape(n, c, h, w)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=offset + 8 * n_pix)
    names: Iterable[str] = tuple(f"class_{i}" for i in range(k))
    sidecar = Path(f"{path}.json")
    if sidecar.exists():
        stored = json.loads(sidecar.read_text()).get("class_names")
        if stored and len(stored) == k:
            names = tuple(stored)
    return LabeledDataset(images.astype(np.float64), labels.astype(np.int64), tuple(names))
