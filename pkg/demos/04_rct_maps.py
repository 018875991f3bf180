"""
Where do adversarial perturbations live?
========================================

The relative change of each DCT coefficient, averaged over a batch, shows
which frequencies an attack moves. The maps are written as CSV and PGM so they
can be plotted with any tool.
"""

from pathlib import Path

import numpy as np

from freqlens import experiment as ex
from freqlens.attacks import run_attack
from freqlens.metrics import band_means, level_means, map_to_csv, map_to_pgm, rct

out = Path("rct_maps")
out.mkdir(exist_ok=True)
std, _ = ex.load_or_train(ex.STANDARD)
test = ex.test_set()
h, w = test.image_shape[1:]
low_max, high_min = (h + w - 2) // 4, -(-(h + w - 2) // 2)

for name in ("pgd", "fgsm", "simba", "cw"):
    rep = run_attack(std, test.images, test.labels, ex.ATTACKS[name])
    m = rct(test.images, rep.adversarial)
    low, high = band_means(m.values, low_max, high_min)
    print(f"{name:6s} low-band mean RCT {low:8.3f}   high-band mean RCT {high:8.3f}")
    map_to_csv(m.values, out / f"{name}.csv")
    map_to_pgm(m.values, out / f"{name}.pgm")

# %%
# Per-level averages of the last map, lowest frequency first.
print(np.round(level_means(m.values), 2).tolist())
