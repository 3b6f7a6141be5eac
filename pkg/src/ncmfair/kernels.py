"""Inverse multi-quadric (IMQ) kernel and MMD²-style discrepancies.

The IMQ kernel is k(x, y) = (rho + ||x - y||²)^(-1/2) with rho > 0.  Its
feature map is infinite-dimensional, so every squared distance between
kernel mean embeddings is expanded into finite sums of kernel evaluations
(the kernel trick); no feature map is ever materialized.

Properties relied on throughout the package:
  * 0 < k(x, y) <= k(x, x) = rho^(-1/2), equality iff x == y;
  * k is characteristic, so an MMD² of zero identifies the distributions;
  * MMD² estimates are squared norms, hence analytically >= 0; floating-
    point cancellation can still produce tiny negatives, which are clamped
    to zero down to a documented floor (below it we raise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, ConfigError, NumericsError

#: Estimates below this are considered numerically unstable rather than noise.
NUMERIC_FLOOR = -1e-9


@dataclass(frozen=True)
class Kernel:
    """IMQ kernel with offset hyperparameter rho (> 0)."""

    rho: float

    def __post_init__(self):
        if not (isinstance(self.rho, (int, float)) and math.isfinite(self.rho) and self.rho > 0):
            raise ConfigError(f"kernel rho must be a positive finite real, got {self.rho!r}")

    def k(self, x, y) -> float:
        return imq(x, y, self.rho)


def imq(x, y, rho: float) -> float:
    """Pointwise IMQ kernel value (rho + ||x - y||²)^(-1/2)."""
    if rho <= 0 or not math.isfinite(rho):
        raise ConfigError(f"rho must be positive, got {rho}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ArgumentError(f"imq: dimension mismatch {x.shape} vs {y.shape}")
    d = x - y
    return float((rho + np.dot(d, d)) ** -0.5)


def _pair_sqdists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Elementwise (a_i - b_j)² summed over the feature axis.  Unlike the
    # x²+y²-2xy expansion this is exactly symmetric under argument swap,
    # which the estimator contract requires.
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def _as_matrix(samples, name: str) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ArgumentError(f"{name} must be a nonempty (n, d) matrix")
    return arr


def _clamp(value: float, context: str) -> float:
    if value < NUMERIC_FLOOR:
        raise NumericsError(
            f"{context}: estimate {value:.3e} fell below the numeric floor {NUMERIC_FLOOR}"
        )
    return max(value, 0.0)


def mmd2_mean_vs_point(samples, target, kernel: Kernel) -> float:
    """Squared RKHS distance between an empirical mean embedding and one point.

    Expands ||(1/q) Σ Φ(s_j) − Φ(t)||² into kernel sums; clamped at zero.
    """
    s = _as_matrix(samples, "samples")
    t = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if t.ndim != 1 or t.shape[0] != s.shape[1]:
        raise ArgumentError(f"target dimension {t.shape} incompatible with samples {s.shape}")
    q = s.shape[0]
    k_ss = (kernel.rho + _pair_sqdists(s, s)) ** -0.5
    k_st = (kernel.rho + np.sum((s - t[None, :]) ** 2, axis=-1)) ** -0.5
    val = float(k_ss.mean()) - 2.0 * float(k_st.mean()) + kernel.rho ** -0.5
    return _clamp(val, "mmd2_mean_vs_point")


def mmd2_mean_vs_mean(samples_a, samples_b, kernel: Kernel) -> float:
    """Squared RKHS distance between two empirical mean embeddings.

    Exactly symmetric in its arguments: the cross term is summed with
    ``math.fsum`` (order-independent exact rounding) and the per-set terms
    are computed identically for each set.
    """
    a = _as_matrix(samples_a, "samples_a")
    b = _as_matrix(samples_b, "samples_b")
    if a.shape[1] != b.shape[1]:
        raise ArgumentError(f"sample dimensions differ: {a.shape} vs {b.shape}")
    k_aa = (kernel.rho + _pair_sqdists(a, a)) ** -0.5
    k_bb = (kernel.rho + _pair_sqdists(b, b)) ** -0.5
    k_ab = (kernel.rho + _pair_sqdists(a, b)) ** -0.5
    cross = math.fsum(k_ab.ravel().tolist()) / (a.shape[0] * b.shape[0])
    val = float(k_aa.mean()) + float(k_bb.mean()) - 2.0 * cross
    return _clamp(val, "mmd2_mean_vs_mean")


def median_heuristic(samples) -> float:
    """Median pairwise squared distance, the default rho for each loss.

    Uses at most 512 evenly-spaced rows.  Falls back to the smallest positive
    distance (then 1.0) when the median degenerates to zero.
    """
    s = _as_matrix(samples, "samples")
    n = s.shape[0]
    if n < 2:
        raise ArgumentError("median_heuristic needs at least 2 rows")
    if n > 512:
        idx = np.unique(np.round(np.linspace(0, n - 1, 512)).astype(int))
        s = s[idx]
        n = s.shape[0]
    d2 = _pair_sqdists(s, s)
    tri = d2[np.triu_indices(n, k=1)]
    med = float(np.median(tri))
    if med > 0.0:
        return med
    positive = tri[tri > 0.0]
    if positive.size:
        return float(positive.min())
    return 1.0


# -- differentiable kernel ops -------------------------------------------------


def imq_gram(x, y, rho: float) -> Tensor:
    """IMQ Gram matrix as an autodiff op.

    Accepts (m, d) × (n, d) or batched (g, m, d) × (g, n, d) operands and
    returns (…, m, n).  rho is a constant (never differentiated).
    """
    if rho <= 0 or not math.isfinite(rho):
        raise ConfigError(f"rho must be positive, got {rho}")
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    yt = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64))
    xd, yd = xt.data, yt.data
    if xd.ndim != yd.ndim or xd.ndim not in (2, 3):
        raise ArgumentError("imq_gram expects matching 2-D or 3-D operands")
    if xd.shape[-1] != yd.shape[-1]:
        raise ArgumentError(f"feature dims differ: {xd.shape} vs {yd.shape}")
    if xd.ndim == 3 and xd.shape[0] != yd.shape[0]:
        raise ArgumentError("batched imq_gram requires equal group counts")

    x2 = np.sum(xd * xd, axis=-1)
    y2 = np.sum(yd * yd, axis=-1)
    # One working buffer end to end: d2 -> rho + d2 -> k.
    k = xd @ np.swapaxes(yd, -1, -2)
    k *= -2.0
    k += x2[..., :, None]
    k += y2[..., None, :]
    np.maximum(k, 0.0, out=k)
    k += rho
    np.sqrt(k, out=k)
    np.divide(1.0, k, out=k)
    if not np.isfinite(np.sum(k)):
        raise NumericsError("non-finite values produced by op 'imq_gram'")

    def bwd(g):
        # dk/dx_i = -k³ (x_i - y_j); dk/dy_j mirrors it.
        w = k * k
        w *= k
        w *= g
        if xt.requires_grad:
            gx = w @ yd - np.sum(w, axis=-1)[..., None] * xd
            ad._accumulate(xt, gx)
        if yt.requires_grad:
            gy = np.swapaxes(w, -1, -2) @ xd - np.sum(w, axis=-2)[..., None] * yd
            ad._accumulate(yt, gy)

    return Tensor(k, _parents=(xt, yt), _backward=bwd)


def grouped_mmd2_mean_vs_point(samples: Tensor, targets, rho: float) -> Tensor:
    """Mean over groups of MMD²(empirical mean of group i, point target_i).

    ``samples`` is (g, q, d), ``targets`` is (g, d).  Because every group has
    the same size, the average of per-group Gram means equals the mean over
    the full stacked Gram tensors, which keeps the graph small.
    """
    t = targets if isinstance(targets, Tensor) else Tensor(np.asarray(targets, dtype=np.float64))
    if samples.data.ndim != 3 or t.data.ndim != 2:
        raise ArgumentError("grouped_mmd2_mean_vs_point expects (g,q,d) samples, (g,d) targets")
    if samples.data.shape[0] != t.data.shape[0] or samples.data.shape[2] != t.data.shape[1]:
        raise ArgumentError(
            f"group shapes incompatible: {samples.data.shape} vs {t.data.shape}"
        )
    t3 = ad.reshape(t, (t.data.shape[0], 1, t.data.shape[1]))
    k_ss = tmean_full(imq_gram(samples, samples, rho))
    k_st = tmean_full(imq_gram(samples, t3, rho))
    const = rho ** -0.5
    return ad.add(ad.sub(k_ss, ad.mul(k_st, 2.0)), const)


def grouped_mmd2_mean_vs_mean(samples_a: Tensor, samples_b: Tensor, rho: float) -> Tensor:
    """Mean over groups of MMD²(group-a mean embedding, group-b mean embedding).

    Both operands are (g, m, d) / (g, n, d); group sizes are uniform so full
    means over the stacked Grams realize the per-group average.
    """
    if samples_a.data.ndim != 3 or samples_b.data.ndim != 3:
        raise ArgumentError("grouped_mmd2_mean_vs_mean expects 3-D (g, q, d) operands")
    k_aa = tmean_full(imq_gram(samples_a, samples_a, rho))
    k_bb = tmean_full(imq_gram(samples_b, samples_b, rho))
    k_ab = tmean_full(imq_gram(samples_a, samples_b, rho))
    return ad.sub(ad.add(k_aa, k_bb), ad.mul(k_ab, 2.0))


def tmean_full(t: Tensor) -> Tensor:
    return ad.tmean(t)


def mmd2_mean_vs_point_t(samples: Tensor, target, kernel: Kernel) -> Tensor:
    """Differentiable single-group variant of :func:`mmd2_mean_vs_point`."""
    s3 = ad.reshape(samples, (1,) + tuple(samples.data.shape))
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float64))
    t2 = ad.reshape(t, (1, t.data.size))
    return ad.relu(grouped_mmd2_mean_vs_point(s3, t2, kernel.rho))


def mmd2_mean_vs_mean_t(samples_a: Tensor, samples_b: Tensor, kernel: Kernel) -> Tensor:
    """Differentiable single-pair variant of :func:`mmd2_mean_vs_mean`."""
    a3 = ad.reshape(samples_a, (1,) + tuple(samples_a.data.shape))
    b3 = ad.reshape(samples_b, (1,) + tuple(samples_b.data.shape))
    return ad.relu(grouped_mmd2_mean_vs_mean(a3, b3, kernel.rho))
