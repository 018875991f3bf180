"""
Robust counterparts
===================

Starting from an unrelated training image, gradient descent finds an image
whose pooled activation matches that of a target. Whatever the counterpart
still gets wrong is invisible to the network, so the spectrum of the
difference shows which frequencies each network ignores.
"""

import numpy as np

from freqlens import experiment as ex
from freqlens.attribution import low_band_cutoff
from freqlens.metrics import band_mass_fraction, level_means, map_to_pgm
from freqlens.robustgen import RobustGenConfig, counterpart_spectrum_diff, generate_counterparts

train, test = ex.train_set(), ex.test_set()
targets = test.images[:50]
cut = low_band_cutoff(*test.image_shape[1:])
cfg = RobustGenConfig(iterations=ex.COUNTERPART_ITERATIONS, seed=0)

nets = {"standard": ex.load_or_train(ex.STANDARD)[0]}
for eps in ex.ROBUST_EPSILONS:
    nets[f"robust_{eps}"] = ex.load_or_train(ex.robust_config(eps))[0]

for name, net in nets.items():
    x_r, obj, _ = generate_counterparts(net.representation, targets, train.images, cfg)
    diff = counterpart_spectrum_diff(targets, x_r)
    print(f"{name:12s} final objective {obj.mean():.4f}  low-band fraction {band_mass_fraction(diff, cut):.4f}")
    print("    per-level mean |dDCT|:", np.round(level_means(diff)[:8], 3).tolist(), "...")
    map_to_pgm(diff, f"counterpart_diff_{name}.pgm")
