"""Small convolutional classifier with standard and PGD adversarial training.

Architecture (fixed)::

    conv 3x3 (C -> 8) - relu - conv 3x3 (8 -> 16) - relu - avgpool 2x2 - dense (-> K)

The flattened pooled activation is the representation layer used when
generating robust counterparts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .datasets import LabeledDataset
from .rng import substream

__all__ = [
    "ARCHITECTURE",
    "ConvNet",
    "TrainConfig",
    "EpochMetrics",
    "TrainingDivergedError",
    "train",
    "evaluate",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

ARCHITECTURE = (
    ("conv2d", {"out_channels": 8, "kernel": 3}),
    ("relu", {}),
    ("conv2d", {"out_channels": 16, "kernel": 3}),
    ("relu", {}),
    ("avgpool2d", {"size": 2}),
    ("dense", {}),
)
PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")

_MODEL_MAGIC = b"FQLM"
_MODEL_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


def _param_shapes(input_shape, num_classes) -> dict[str, tuple[int, ...]]:
    c, h, w = input_shape
    if h < 6 or w < 6:
        raise ValueError(f"input must be at least 6x6, got {h}x{w}")
    feat = 16 * ((h - 4) // 2) * ((w - 4) // 2)
    return {
        "conv1_w": (8, c, 3, 3),
        "conv1_b": (8,),
        "conv2_w": (16, 8, 3, 3),
        "conv2_b": (16,),
        "fc_w": (feat, num_classes),
        "fc_b": (num_classes,),
    }


@dataclass
class ConvNet:
    input_shape: tuple[int, int, int]
    num_classes: int
    params: dict[str, np.ndarray]

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        shapes = _param_shapes(self.input_shape, self.num_classes)
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, input_shape, num_classes: int, seed: int = 0) -> ConvNet:
        """He-normal conv weights, small dense weights, zero biases."""
        rng = substream(seed, "init")
        shapes = _param_shapes(tuple(input_shape), num_classes)
        params = {}
        for name in PARAM_NAMES:
            shape = shapes[name]
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            elif name.startswith("conv"):
                fan_in = shape[1] * shape[2] * shape[3]
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
            else:
                params[name] = rng.normal(0.0, 0.1 / np.sqrt(shape[0]), shape)
        return cls(tuple(input_shape), num_classes, params)

    def copy(self) -> ConvNet:
        return ConvNet(self.input_shape, self.num_classes, {k: v.copy() for k, v in self.params.items()})

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(self.params[name].astype("<f8").tobytes())
        return h.hexdigest()

    # graph construction

    def _leaves(self) -> dict[str, T.Tensor]:
        return {k: T.Tensor(v) for k, v in self.params.items()}

    def representation(self, x: T.Tensor, leaves: dict[str, T.Tensor] | None = None) -> T.Tensor:
        """Flattened pooled activation, shape (N, features)."""
        p = leaves if leaves is not None else self._leaves()
        h = T.relu(T.conv2d(x, p["conv1_w"], p["conv1_b"]))
        h = T.relu(T.conv2d(h, p["conv2_w"], p["conv2_b"]))
        return T.flatten(T.avgpool2d(h))

    def logits_graph(self, x: T.Tensor, leaves: dict[str, T.Tensor] | None = None) -> T.Tensor:
        p = leaves if leaves is not None else self._leaves()
        return T.dense(self.representation(x, p), p["fc_w"], p["fc_b"])

    # array-level API

    def _as_batch(self, images) -> tuple[np.ndarray, bool]:
        x = np.asarray(images, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ValueError(f"expected images of shape {self.input_shape}, got {np.shape(images)}")
        return x, single

    def forward_logits(self, images, chunk: int = 512) -> np.ndarray:
        """Logits for one image (C, H, W) -> (K,) or a batch (N, C, H, W) -> (N, K)."""
        x, single = self._as_batch(images)
        leaves = self._leaves()
        out = np.concatenate(
            [self.logits_graph(T.Tensor(x[i : i + chunk]), leaves).data for i in range(0, len(x), chunk)]
        ) if len(x) else np.zeros((0, self.num_classes))
        return out[0] if single else out

    def predict(self, images) -> np.ndarray:
        return np.argmax(self.forward_logits(images), axis=-1)

    def represent(self, images) -> np.ndarray:
        x, single = self._as_batch(images)
        out = self.representation(T.Tensor(x)).data
        return out[0] if single else out

    def logit_gradient(self, images, weights) -> tuple[np.ndarray, np.ndarray]:
        """Logits and the input gradient of ``sum(weights * logits)``.

        ``weights`` has the shape of the logits; each image's gradient only
        depends on its own row.
        """
        x, single = self._as_batch(images)
        weights = np.asarray(weights, dtype=np.float64)
        if single:
            weights = weights[None]
        xt = T.Tensor(x)
        logits = self.logits_graph(xt)
        (g,) = T.backward(T.weighted_sum(logits, weights), [xt])
        return (logits.data[0], g[0]) if single else (logits.data, g)

    def input_gradient(self, images, c, wrt: str = "loss") -> np.ndarray:
        """Input gradient of the cross-entropy loss or of a single logit.

        Args:
            images: One image or a batch.
            c: Class index, or one class per image.
            wrt: ``"loss"`` for the cross-entropy at label ``c`` (summed over
                the batch, so per-image gradients are independent of batch
                size) or ``"logit"`` for logit ``c``.
        """
        x, single = self._as_batch(images)
        c = np.broadcast_to(np.asarray(c, dtype=np.int64), (len(x),))
        if c.size and (c.min() < 0 or c.max() >= self.num_classes):
            raise ValueError(f"class index out of range [0, {self.num_classes})")
        xt = T.Tensor(x)
        logits = self.logits_graph(xt)
        if wrt == "loss":
            out = T.softmax_cross_entropy(logits, c, reduction="sum")
        elif wrt == "logit":
            onehot = np.zeros(logits.shape)
            onehot[np.arange(len(x)), c] = 1.0
            out = T.weighted_sum(logits, onehot)
        else:
            raise ValueError(f"wrt must be 'loss' or 'logit', got {wrt!r}")
        (g,) = T.backward(out, [xt])
        return g[0] if single else g

    def loss(self, images, labels) -> float:
        x, _ = self._as_batch(images)
        return float(T.softmax_cross_entropy(self.logits_graph(T.Tensor(x)), labels).data)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 0.03
    seed: int = 0
    adversarial: bool = False
    adv_norm: str = "l2"
    adv_epsilon: float = 0.25
    adv_steps: int = 7
    adv_step_size: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 are required")
        if self.adv_epsilon < 0:
            raise ValueError("adv_epsilon must be >= 0")
        if self.adversarial and self.adv_steps < 1:
            raise ValueError("adv_steps must be >= 1 for adversarial training")
        if self.adv_norm not in ("linf", "l2"):
            raise ValueError(f"adv_norm must be 'linf' or 'l2', got {self.adv_norm!r}")

    @property
    def inner_step_size(self) -> float:
        if self.adv_step_size is not None:
            return self.adv_step_size
        return 2.5 * self.adv_epsilon / self.adv_steps


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_accuracy: float
    batch_accuracy: float = field(default=float("nan"))


def evaluate(net: ConvNet, dataset: LabeledDataset) -> float:
    """Fraction of images whose argmax logit equals the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(net.predict(dataset.images) == dataset.labels))


def _run_epoch(net: ConvNet, dataset: LabeledDataset, cfg: TrainConfig, inner, rng, epoch: int) -> EpochMetrics:
    from .attacks import pgd

    n = len(dataset)
    order = rng.permutation(n)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        x, y = dataset.images[idx], dataset.labels[idx]
        if inner is not None:
            x = pgd(net, x, y, inner)
        leaves = net._leaves()
        logits = net.logits_graph(T.Tensor(x), leaves)
        loss = T.softmax_cross_entropy(logits, y)
        grads = T.backward(loss, [leaves[k] for k in PARAM_NAMES])
        for name, g in zip(PARAM_NAMES, grads):
            net.params[name] = net.params[name] - cfg.learning_rate * g
        if not all(np.all(np.isfinite(p)) for p in net.params.values()):
            raise T.NonFiniteError(f"parameters became non-finite at batch offset {start}")
        total_loss += float(loss.data) * len(idx)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
    return EpochMetrics(epoch, total_loss / n, evaluate(net, dataset), correct / n)


def train(net: ConvNet, dataset: LabeledDataset, cfg: TrainConfig) -> tuple[ConvNet, list[EpochMetrics]]:
    """Minibatch SGD, optionally on PGD adversarial examples (Madry et al.).

    The input network is left untouched; a trained copy is returned along with
    per-epoch metrics. ``batch_accuracy`` is the accuracy on the (possibly
    adversarial) batches seen during the epoch, before each update.

    Raises:
        TrainingDivergedError: The loss became non-finite.
    """
    from .attacks import AttackConfig

    if len(dataset) == 0:
        raise ValueError("empty training set")
    if dataset.image_shape != net.input_shape:
        raise ValueError(f"dataset images {dataset.image_shape} do not match network input {net.input_shape}")
    if dataset.labels.max() >= net.num_classes:
        raise ValueError("dataset labels exceed the network's class count")

    net = net.copy()
    rng = substream(cfg.seed, "train")
    inner = None
    if cfg.adversarial:
        inner = AttackConfig(
            kind="pgd", norm=cfg.adv_norm, epsilon=cfg.adv_epsilon,
            steps=cfg.adv_steps, step_size=max(cfg.inner_step_size, 1e-12),
        )
    history = []
    for epoch in range(cfg.epochs):
        try:
            metrics = _run_epoch(net, dataset, cfg, inner, rng, epoch)
        except T.NonFiniteError as exc:
            raise TrainingDivergedError(f"non-finite values in epoch {epoch}: {exc}") from exc
        log.info("epoch %d loss %.4f train acc %.3f", epoch, metrics.loss, metrics.train_accuracy)
        history.append(metrics)
    return net, history


def save_model(net: ConvNet, path) -> None:
    """Binary model file.

    Layout (little-endian): ``b"FQLM"``, u32 version, u32 descriptor length,
    UTF-8 JSON descriptor (architecture, input shape, classes, parameter
    names and shapes), then each parameter as raw float64 in descriptor order.
    """
    desc = {
        "architecture": [[name, opts] for name, opts in ARCHITECTURE],
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "params": [[name, list(net.params[name].shape)] for name in PARAM_NAMES],
    }
    blob = json.dumps(desc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC + struct.pack("<II", _MODEL_VERSION, len(blob)) + blob)
        for name in PARAM_NAMES:
            fh.write(net.params[name].astype("<f8").tobytes())


def load_model(path) -> ConvNet:
    raw = Path(path).read_bytes()
    if raw[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (magic {raw[:4]!r})")
    version, size = struct.unpack_from("<II", raw, 4)
    if version != _MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model file version {version}")
    desc = json.loads(raw[12 : 12 + size])
    if [list(a) for a in desc["architecture"]] != [[n, o] for n, o in ARCHITECTURE]:
        raise ValueError(f"{path}: architecture does not match this build")
    offset = 12 + size
    params = {}
    for name, shape in desc["params"]:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return ConvNet(tuple(desc["input_shape"]), int(desc["num_classes"]), params)
