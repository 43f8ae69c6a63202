"""
Separable attention by hand
===========================

A scalar query per token is softmaxed into weights, the weights pool the
keys into one context vector, and that vector gates the rectified values.
Nothing here is ever k x k.
"""

import numpy as np

from smat import autodiff as ad
from smat.attention import SeparableAttention, StandardAttention, separable_core
from smat.autodiff import Tensor

# two tokens, two features: equal query logits give equal weights
Q = Tensor(np.array([[0.0], [0.0]]), dtype=np.float64)
K = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), dtype=np.float64)
V = Tensor(np.array([[1.0, -1.0], [2.0, 2.0]]), dtype=np.float64)

M, trace = separable_core(Q, K, V)
print("softmaxed query :", trace.Q_soft.ravel())
print("context vector  :", trace.A.ravel())      # mean of the key rows: [2, 3]
print("output M        :\n", M.data)              # [[2, 0], [4, 6]]

# %%
# The multiply count grows linearly in the token count.
for k in (64, 256, 1024):
    rng = np.random.default_rng(k)
    q, kk, v = (Tensor(rng.standard_normal(s)) for s in ((k, 1), (k, 32), (k, 32)))
    with ad.count_multiplies() as counter:
        separable_core(q, kk, v)
    print(f"k={k:5d}  multiplies={counter.total:8d}  (2kd + d = {2 * k * 32 + 32})")

# %%
# Whole layers, separable against dot-product attention, at growing k.
d = 64
sep, std = SeparableAttention(d, 0), StandardAttention(d, 0)
for k in (256, 1024, 4096):
    x = Tensor(np.random.default_rng(0).standard_normal((k, d)).astype(np.float32))
    with ad.no_grad(), ad.count_multiplies() as cs:
        sep(x)
    with ad.no_grad(), ad.count_multiplies() as cd:
        std(x)
    print(f"k={k:5d}  separable {cs.total / 1e6:7.2f}M  standard {cd.total / 1e6:8.2f}M multiplies")
