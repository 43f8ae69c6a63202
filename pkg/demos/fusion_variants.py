"""
Four ways to fuse template and search tokens
============================================

A keeps the two regions apart, B only lets them talk across, C stacks
self then cross, and D runs one separable layer over the concatenation.
We count multiplies and time one forward of each at the default sizes
of the last backbone stage (8x8 template, 16x16 search, width 48).
"""

import numpy as np

from smat.attention import Fusion, fusion_multiply_count
from smat.autodiff import Tensor
from smat.bench import time_fusion_variants

k_z, k_x, d = 64, 256, 48

for v in "ABCD":
    print(f"variant {v}: {fusion_multiply_count(v, k_z, k_x, d):>9,d} multiplies per frame")

times = time_fusion_variants(k_z, k_x, d, reps=50)
print("median forward ms:", {v: round(t, 3) for v, t in sorted(times.items(), key=lambda kv: kv[1])})

# %%
# Only A leaves the search stream blind to the template; the others react to it.
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((k_x, d)).astype(np.float32))
for v in "ABCD":
    fusion = Fusion(v, d, rng=0)
    a = fusion(Tensor(rng.standard_normal((k_z, d)).astype(np.float32)), x)[1].data
    b = fusion(Tensor(rng.standard_normal((k_z, d)).astype(np.float32)), x)[1].data
    print(f"variant {v}: search output moves by {np.abs(a - b).max():.3g} when the template changes")
