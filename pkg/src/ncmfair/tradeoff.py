"""Fairness/performance trade-off sweeps, fitted curves, and AUC verdicts.

Each stage-2 run yields a point (E, F): performance E is explained variance
(higher is better, at most 1) and fairness F is the kernel-based
counterfactual-fairness score (lower is better, at least 0).  A method's
frontier is summarized by an ordinary-least-squares line F = m*E + c over
its points; two methods are compared by integrating their fitted lines over
the intersection of observed E ranges.  The smaller integral wins; the
canonical orientation used here always integrates F over E, whatever a
rendered plot puts on which axis.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import (
    ArgumentError,
    ComparisonError,
    DegenerateFitError,
    TrainingError,
)
from .fairness import (
    FairTrainConfig,
    Predictor,
    evaluate,
    resolve_fair_kernel,
    train_fair,
)
from .generation import AbductorModel, MechanismModel
from .rng import RngStream

log = logging.getLogger(__name__)

#: Fitted lines may be integrated at most this fraction of the observed
#: E range beyond either end.
EXTRAPOLATION_ALLOWANCE = 0.05

TIE_TOLERANCE = 1e-12

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class TradeoffPoint:
    method: str
    lambda_fair: float
    seed: int
    e: float    # performance: explained variance, <= 1
    f: float    # fairness score: >= 0, lower is fairer
    mse: float

    def __post_init__(self):
        if self.lambda_fair < 0:
            raise ArgumentError("lambda_fair must be >= 0")
        if self.f < 0:
            raise ArgumentError("fairness score must be >= 0")
        if self.e > 1.0 + 1e-12:
            raise ArgumentError("explained variance cannot exceed 1")


@dataclass(frozen=True)
class FittedCurve:
    slope: float
    intercept: float
    e_min: float
    e_max: float
    n_points: int

    def __post_init__(self):
        if self.e_min > self.e_max:
            raise ArgumentError("e_min must not exceed e_max")
        if self.n_points < 2:
            raise ArgumentError("a fitted curve needs at least 2 points")

    def f_at(self, e: float) -> float:
        return self.slope * e + self.intercept


def fit_line(points) -> FittedCurve:
    """Ordinary least squares F = m*E + c over the points' (E, F) pairs."""
    points = list(points)
    if len(points) < 2:
        raise DegenerateFitError("need at least 2 points to fit a line")
    e = np.array([p.e for p in points], dtype=np.float64)
    f = np.array([p.f for p in points], dtype=np.float64)
    var = float(np.mean((e - e.mean()) ** 2))
    if var < 1e-300:
        raise DegenerateFitError("all points share one E value; line is undetermined")
    slope = float(np.mean((e - e.mean()) * (f - f.mean()))) / var
    intercept = float(f.mean()) - slope * float(e.mean())
    return FittedCurve(slope, intercept, float(e.min()), float(e.max()), len(points))


def auc(curve: FittedCurve, e_lo: float, e_hi: float) -> float:
    """Integral of the fitted line over [e_lo, e_hi] (closed form).

    The interval may exceed the observed E range by at most
    ``EXTRAPOLATION_ALLOWANCE`` of its width on each side.
    """
    if not (e_lo < e_hi):
        raise ArgumentError(f"inverted or empty range [{e_lo}, {e_hi}]")
    slack = EXTRAPOLATION_ALLOWANCE * (curve.e_max - curve.e_min)
    if e_lo < curve.e_min - slack - 1e-15 or e_hi > curve.e_max + slack + 1e-15:
        raise ArgumentError(
            f"range [{e_lo}, {e_hi}] extrapolates beyond "
            f"[{curve.e_min}, {curve.e_max}] by more than {EXTRAPOLATION_ALLOWANCE:.0%}"
        )
    return curve.slope * (e_hi**2 - e_lo**2) / 2.0 + curve.intercept * (e_hi - e_lo)


def compare(points_1, points_2) -> dict:
    """Fit both point sets and integrate over the shared E range.

    The method with the smaller integral of F over E offers the better
    fairness at matched performance and wins the verdict; differences below
    ``TIE_TOLERANCE`` are ties.
    """
    points_1, points_2 = list(points_1), list(points_2)
    if not points_1 or not points_2:
        raise ArgumentError("compare needs two nonempty point sets")
    name_1 = points_1[0].method
    name_2 = points_2[0].method
    curve_1 = fit_line(points_1)
    curve_2 = fit_line(points_2)
    lo = max(curve_1.e_min, curve_2.e_min)
    hi = min(curve_1.e_max, curve_2.e_max)
    if not (lo < hi):
        raise ComparisonError("point sets share no common E range")
    auc_1 = auc(curve_1, lo, hi)
    auc_2 = auc(curve_2, lo, hi)
    if abs(auc_1 - auc_2) < TIE_TOLERANCE:
        verdict = "tie"
    else:
        verdict = name_1 if auc_1 < auc_2 else name_2
    return {
        "auc": {name_1: auc_1, name_2: auc_2},
        "e_range": [lo, hi],
        "verdict": verdict,
        "n_points": {name_1: len(points_1), name_2: len(points_2)},
    }


def sweep(mech: MechanismModel, abd: AbductorModel, train: Dataset, test: Dataset,
          base_cfg: FairTrainConfig, lambdas, repeats: int, base_seed: int,
          method: str | None = None, predictor_hidden=(32, 32)):
    """One stage-2 training + evaluation per (lambda, repeat).

    Run seeds are ``base_seed + 1000*lambda_index + repeat``; every run gets
    its own named streams, so the sweep is reproducible point-by-point.
    Failed runs are logged and skipped; returns (points, failures) and raises
    only if every run failed.
    """
    lambdas = list(lambdas)
    if not lambdas:
        raise ArgumentError("lambdas must be nonempty")
    if repeats < 1:
        raise ArgumentError("repeats must be >= 1")
    method = method or f"{base_cfg.fairness_loss}-fairness"
    points: list[TradeoffPoint] = []
    failures: list[dict] = []
    kernel = resolve_fair_kernel(train, base_cfg)
    for i, lam in enumerate(lambdas):
        for r in range(repeats):
            run_seed = base_seed + 1000 * i + r
            cfg = FairTrainConfig(**{**base_cfg.__dict__, "lambda_fair": float(lam)})
            try:
                init_rng = RngStream(run_seed, 0).spawn("predictor-init")
                h = Predictor.build(train.x.shape[1], train.a.shape[1],
                                    train.y.shape[1], init_rng,
                                    hidden=predictor_hidden)
                train_rng = RngStream(run_seed, 0).spawn("stage2")
                h, _ = train_fair(h, mech, abd, train, cfg, train_rng)
                eval_rng = RngStream(run_seed, 0).spawn("stage2-eval")
                metrics = evaluate(h, mech, abd, test, cfg, kernel, eval_rng)
                points.append(TradeoffPoint(
                    method=method, lambda_fair=float(lam), seed=run_seed,
                    e=metrics["explained_variance"], f=metrics["fair_mmd"],
                    mse=metrics["mse"],
                ))
            except Exception as exc:  # noqa: BLE001 - sweep isolates run failures
                log.warning("sweep run lambda=%s repeat=%d failed: %s", lam, r, exc)
                failures.append({"lambda_fair": float(lam), "repeat": r,
                                 "seed": run_seed, "error": str(exc)})
    if not points:
        raise TrainingError(f"every sweep run failed ({len(failures)} failures)")
    points.sort(key=lambda p: (p.method, p.lambda_fair, p.seed))
    return points, failures


# -- serialization and plotting ---------------------------------------------------


def points_to_csv(points, path, config_digest: str | None = None) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        if config_digest is not None:
            fh.write(f"# config_digest={config_digest}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "lambda_fair", "seed", "E", "F", "mse"])
        for p in points:
            writer.writerow([p.method, repr(p.lambda_fair), p.seed,
                             repr(p.e), repr(p.f), repr(p.mse)])
    os.replace(tmp, path)


def points_from_csv(path) -> list[TradeoffPoint]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    if header != ["method", "lambda_fair", "seed", "E", "F", "mse"]:
        raise ArgumentError(f"unexpected points CSV header: {header}")
    return [TradeoffPoint(m, float(lam), int(seed), float(e), float(f), float(mse))
            for m, lam, seed, e, f, mse in reader]


def _scale(lo: float, hi: float, size: float, margin: float):
    span = hi - lo
    if span <= 0:
        lo, hi, span = lo - 1.0, hi + 1.0, 2.0
    pad = 0.05 * span

    def to_px(v):
        return margin + (v - (lo - pad)) / (span + 2 * pad) * size

    return to_px, lo - pad, hi + pad


def emit_plot(points, curves, path, config_digest: str | None = None) -> None:
    """Self-contained SVG scatter of (E, F) points with one fitted line per
    method, plus a sibling CSV of the points.

    ``curves`` maps method name to FittedCurve (or is a list aligned with
    method discovery order); None entries are skipped.  Axes are drawn as
    <path> elements; each fitted curve contributes exactly one <line>
    element and each point one <circle>, so the structure is
    machine-checkable.
    """
    points = list(points)
    if not points:
        raise ArgumentError("emit_plot needs at least one point")
    width, height, margin = 640.0, 480.0, 60.0
    inner_w, inner_h = width - 2 * margin, height - 2 * margin
    ex, fx = [p.e for p in points], [p.f for p in points]
    x_px, e_lo, e_hi = _scale(min(ex), max(ex), inner_w, margin)
    y_raw, f_lo, f_hi = _scale(min(fx), max(fx), inner_h, margin)

    def y_px(v):
        return height - y_raw(v)

    methods = []
    for p in points:
        if p.method not in methods:
            methods.append(p.method)
    color = {m: _PALETTE[i % len(_PALETTE)] for i, m in enumerate(methods)}
    curve_map = curves if isinstance(curves, dict) else dict(zip(methods, curves))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
    ]
    if config_digest is not None:
        parts.append(f"<!-- config_digest={config_digest} -->")
    parts += [
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>',
        f'<path d="M {margin} {margin} L {margin} {height - margin} '
        f'L {width - margin} {height - margin}" stroke="black" fill="none"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15:.1f}" text-anchor="middle" '
        f'font-size="14">E (explained variance)</text>',
        f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {height / 2:.1f})">F (counterfactual unfairness)</text>',
    ]
    for m in methods:
        curve = curve_map.get(m)
        if curve is None:
            continue
        x1, x2 = x_px(curve.e_min), x_px(curve.e_max)
        y1, y2 = y_px(curve.f_at(curve.e_min)), y_px(curve.f_at(curve.e_max))
        parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{color[m]}" stroke-width="2"/>'
        )
    for p in points:
        parts.append(
            f'<circle cx="{x_px(p.e):.2f}" cy="{y_px(p.f):.2f}" r="4" '
            f'fill="{color[p.method]}" fill-opacity="0.75"/>'
        )
    legend_y = margin
    for m in methods:
        lams = sorted({p.lambda_fair for p in points if p.method == m})
        lam_text = ", ".join(f"{v:g}" for v in lams)
        parts.append(
            f'<rect x="{width - margin - 220:.1f}" y="{legend_y:.1f}" width="12" '
            f'height="12" fill="{color[m]}"/>'
        )
        parts.append(
            f'<text x="{width - margin - 202:.1f}" y="{legend_y + 11:.1f}" '
            f'font-size="12">{m} (lambda: {lam_text})</text>'
        )
        legend_y += 20
    parts.append("</svg>")

    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    os.replace(tmp, path)

    stem, _ = os.path.splitext(os.fspath(path))
    points_to_csv(points, stem + ".csv", config_digest=config_digest)
