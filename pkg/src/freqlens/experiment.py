"""The shipped desk-scale experiment: dataset, training and attack settings.

Everything the directional checks and the demos rely on is pinned here, so a
run on one platform reproduces bit-identical models. Trained models are cached
on disk keyed by a hash of the settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict
from pathlib import Path

from .attacks import AttackConfig
from .datasets import LabeledDataset, SyntheticSpec, synthesize
from .model import ConvNet, EpochMetrics, TrainConfig, load_model, save_model, train

__all__ = [
    "TRAIN_SPEC",
    "TEST_SPEC",
    "STANDARD",
    "ROBUST_EPSILONS",
    "LINF_EPSILON",
    "ATTACKS",
    "COUNTERPART_ITERATIONS",
    "robust_config",
    "train_set",
    "test_set",
    "load_or_train",
    "cache_dir",
]

log = logging.getLogger(__name__)

# Bright shapes on a dark background with strong pixel noise. The reduced
# contrast keeps the standard net's margins small enough for a 0.15 linf
# budget to break it; the noise is a high-frequency nuisance that adversarial
# training learns to ignore.
TRAIN_SPEC = SyntheticSpec(samples_per_class=500, size=16, noise_std=0.2, background=0.1, contrast=0.8, seed=0)
TEST_SPEC = SyntheticSpec(samples_per_class=50, size=16, noise_std=0.2, background=0.1, contrast=0.8, seed=1)

STANDARD = TrainConfig(epochs=15, batch_size=16, learning_rate=0.03, seed=0)
ROBUST_EPSILONS = (0.25, 0.5)
LINF_EPSILON = 8 / 255
INIT_SEED = 0
COUNTERPART_ITERATIONS = 300

ATTACKS = {
    "pgd": AttackConfig(kind="pgd", norm="linf", epsilon=0.15, steps=20, step_size=0.02),
    "fgsm": AttackConfig(kind="fgsm", norm="linf", epsilon=0.15),
    "cw": AttackConfig(kind="cw", steps=200, step_size=0.01, cw_c=1.0),
    "simba": AttackConfig(kind="simba", norm="linf", epsilon=0.2, step_size=0.2, steps=256, simba_basis="dct"),
}


def robust_config(epsilon: float, norm: str = "l2") -> TrainConfig:
    """Madry-style adversarial training at the given budget.

    The directional checks use the two l2 budgets in ``ROBUST_EPSILONS``;
    ``robust_config(LINF_EPSILON, "linf")`` gives the linf variant.
    """
    return TrainConfig(
        epochs=10, batch_size=STANDARD.batch_size, learning_rate=STANDARD.learning_rate,
        seed=STANDARD.seed, adversarial=True, adv_norm=norm, adv_epsilon=epsilon, adv_steps=7,
    )


def train_set() -> LabeledDataset:
    return synthesize(TRAIN_SPEC)


def test_set() -> LabeledDataset:
    return synthesize(TEST_SPEC)


def cache_dir() -> Path:
    """``$FREQLENS_CACHE`` if set, else ``~/.cache/freqlens``."""
    root = os.environ.get("FREQLENS_CACHE")
    return Path(root) if root else Path.home() / ".cache" / "freqlens"


def _key(spec: SyntheticSpec, cfg: TrainConfig) -> str:
    from . import __version__

    blob = json.dumps(
        {"spec": asdict(spec), "train": asdict(cfg), "init": INIT_SEED, "version": __version__},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_or_train(cfg: TrainConfig, spec: SyntheticSpec = TRAIN_SPEC, cache: Path | None = None) -> tuple[ConvNet, list[EpochMetrics]]:
    """Train on the synthetic set described by ``spec``, reusing a cached result.

    The per-epoch history is cached next to the model so that cached and fresh
    calls return the same thing.
    """
    cache = cache_dir() if cache is None else Path(cache)
    key = _key(spec, cfg)
    model_path = cache / f"{key}.fqlm"
    hist_path = cache / f"{key}.json"
    if model_path.exists() and hist_path.exists():
        try:
            history = [EpochMetrics(**m) for m in json.loads(hist_path.read_text())]
            return load_model(model_path), history
        except (ValueError, TypeError, KeyError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", model_path, exc)
    data = synthesize(spec)
    net0 = ConvNet.initialize(data.image_shape, data.num_classes, seed=INIT_SEED)
    net, history = train(net0, data, cfg)
    try:
        cache.mkdir(parents=True, exist_ok=True)
        save_model(net, model_path)
        hist_path.write_text(json.dumps([asdict(m) for m in history]))
    except OSError as exc:
        log.warning("could not write model cache %s: %s", cache, exc)
    return net, history
