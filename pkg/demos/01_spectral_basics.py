"""
Spectra, frequency levels and the l1 lower bound
================================================

A tour of the transforms everything else is built on: the unnormalized DFT,
the orthonormal 2D DCT-II, and the anti-diagonal frequency levels used as the
unit of ablation. It ends with the observation that motivates the whole
toolkit: the DC coefficient bounds how far apart two images are.
"""

import numpy as np

from freqlens.spectral import (
    dct2_forward,
    dct2_inverse,
    dft_forward,
    fourier_basis_sum,
    frequency_levels,
    l1_lower_bound_check,
    level_energy,
)

rng = np.random.default_rng(0)

# %%
# The unnormalized DFT puts the plain pixel sum at index 0.
x = np.array([0.0, 1.0, 0.0, -1.0])
print("DFT of", x, "->", np.round(dft_forward(x), 12))
print("X0 equals the sum:", dft_forward(x)[0].real == x.sum())

# %%
# Summing a Fourier basis vector over a full period gives d at k = 0 and
# vanishes everywhere else. This is what makes X0 special.
for d, k in [(8, 0), (8, 3), (64, 17)]:
    print(f"d={d:2d} k={k:2d}: {abs(fourier_basis_sum(d, k)):.3e}")

# %%
# The 2D DCT is orthonormal, so it preserves energy and inverts exactly.
img = rng.random((3, 16, 16))
spec = dct2_forward(img)
print("round trip error:", np.abs(dct2_inverse(spec) - img).max())
print("energy ratio:", (spec**2).sum() / (img**2).sum())

# %%
# Coefficients with the same u + v form one frequency level. A 16x16 image
# has 31 levels; level 0 is the DC term alone.
levels = frequency_levels(16, 16)
print("levels:", len(levels), "sizes of the first five:", [len(lv.members) for lv in levels[:5]])
energy = level_energy(spec)
print("share of energy at level 0: %.3f" % (energy[0] / energy.sum()))

# %%
# The l1 distance between two images is at least the gap between their DC
# terms. The bound is tight when every pixel moves in the same direction.
a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
print(l1_lower_bound_check(a, b))
print(l1_lower_bound_check(a, a + 0.05))
