"""Print the three radial basis families side by side.

Gaussian: fixed grid of bumps, one per 0.1 A.  Bessel: sinc-like modes
that vanish at the cutoff.  Linear: trainable affine features (shown at a
random initialization).  ASCII profiles over r in [0.2, 3.0].
"""

import numpy as np

from geoattn import autodiff as ad
from geoattn.geometry import (BasisConfig, bessel_basis, gaussian_basis,
                              linear_basis)

rng = np.random.default_rng(0)
rs = np.linspace(0.2, 3.0, 15)

g_cfg = BasisConfig(kind="gaussian", n_basis=30)
b_cfg = BasisConfig(kind="bessel", n_basis=6, bessel_cutoff=3.0)
lin_a = ad.constant(rng.uniform(-1, 1, 6))
lin_b = ad.constant(rng.uniform(-1, 1, 6))


def row(values, lo, hi, width=32):
    cells = np.clip(((values - lo) / (hi - lo) * (width - 1)).astype(int),
                    0, width - 1)
    line = [" "] * width
    for c in cells:
        line[c] = "*"
    return "".join(line)


print("Gaussian: index of the active bump tracks r")
for r in rs:
    vals = gaussian_basis(ad.constant(r), g_cfg).data
    print(f"  r={r:4.2f}  peak at k={np.argmax(vals) + 1:2d}  "
          f"max={vals.max():.3f}")

print("\nBessel: first three components")
for r in rs:
    vals = bessel_basis(ad.constant(r), b_cfg).data
    print(f"  r={r:4.2f}  " + "  ".join(f"{v:+.3f}" for v in vals[:3]))

print("\nLinear (random init): affine in r, so every column is a line")
for r in rs:
    vals = linear_basis(ad.constant(r), lin_a, lin_b).data
    print(f"  r={r:4.2f}  " + row(vals, -4, 4))
