"""Kernel discrepancies 101: the IMQ kernel and MMD²-style distances.

Walks through the building blocks every loss in this package rests on:
pointwise kernel values, squared distances between empirical kernel mean
embeddings, the median-heuristic bandwidth, and the reason a kernel metric
beats a means-only metric.
"""

import numpy as np

from ncmfair import Kernel, imq, median_heuristic, mmd2_mean_vs_mean, mmd2_mean_vs_point
from ncmfair.rng import RngStream

rng = RngStream(seed=0, stream_id=0)

# -- pointwise kernel ---------------------------------------------------------
x = np.array([0.0, 0.0])
y = np.array([1.0, np.sqrt(2.0)])
print("k(x, x) with rho=1:", imq(x, x, 1.0))          # = 1/sqrt(rho)
print("k(x, y) with rho=1:", imq(x, y, 1.0))          # ||x-y||² = 3 -> 0.5

# -- the median heuristic picks rho at the data's own scale --------------------
sample = rng.standard_normal((400, 2)) * 3.0
rho = median_heuristic(sample)
kernel = Kernel(rho)
print(f"\nmedian heuristic on N(0, 9) data: rho = {rho:.2f}")

# -- same distribution vs shifted distribution ---------------------------------
a = rng.standard_normal((200, 2))
b = rng.standard_normal((200, 2))
b_shifted = b + 1.5
print("\nMMD²(a, b)         :", f"{mmd2_mean_vs_mean(a, b, kernel):.6f}")
print("MMD²(a, b + 1.5)   :", f"{mmd2_mean_vs_mean(a, b_shifted, kernel):.6f}")

# -- mean embedding vs a single point ------------------------------------------
target = a[0]
print("\nMMD²(mean of a, a[0]):", f"{mmd2_mean_vs_point(a, target, kernel):.6f}")
print("MMD²([a[0]], a[0])   :", mmd2_mean_vs_point(target[None, :], target, kernel))

# -- why means are not enough ---------------------------------------------------
# Two prediction sets with identical means but different spreads: a metric
# that compares sample means sees nothing; the kernel metric does.
narrow = rng.standard_normal((500, 1))
wide = 2.0 * rng.standard_normal((500, 1))
k1 = Kernel(1.0)
print("\nequal-mean sets, unequal spread:")
print("  |mean difference|     :", f"{abs(narrow.mean() - wide.mean()):.4f}")
print("  MMD²(narrow, wide)    :", f"{mmd2_mean_vs_mean(narrow, wide, k1):.4f}")
