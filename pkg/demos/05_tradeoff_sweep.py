"""Sweep the fairness weight and compare two training arms by trade-off AUC.

For each lambda and repeat a fresh predictor is trained and evaluated,
yielding (E, F) points: E = explained variance (higher better), F = kernel
counterfactual-fairness score (lower better).  Lines are fitted per arm and
integrated over the common E range; the smaller integral wins.

The generator pair is *trained* (stage 1) rather than the exact oracle: on
this noiseless ground truth the oracle's counterfactual x-distributions are
point masses, which hides exactly the distributional spread the kernel
metric exists to see.  Learned abductors carry genuine posterior spread, so
the two arms genuinely differ.  Expect a few minutes of runtime; writes an
SVG + CSV into ./demo_out.

Note: at this reduced scale the AUC verdict between arms can go either way
run to run; the acceptance suite reproduces the directional comparison at
the full reference scale.
"""

import json
import os

import numpy as np

from ncmfair import (
    AbductorModel,
    FairTrainConfig,
    GenTrainConfig,
    MechanismModel,
    compare,
    default_scm,
    emit_plot,
    fit_line,
    sample_synthetic,
    sweep,
    train_stage1,
)
from ncmfair.data import split
from ncmfair.rng import RngStream

scm = default_scm()
data = sample_synthetic(scm, 3000, RngStream(0, 0).spawn("data"))
train, test = split(data, 0.8, RngStream(0, 0).spawn("split"), normalize=False)

print("stage 1: training the counterfactual generator (reduced budget)...")
init = RngStream(0, 0).spawn("stage1-init")
mech = MechanismModel.build(1, scm.d_x, scm.d_u, init)
abd = AbductorModel.build(scm.d_x, 1, scm.d_u, init)
gen_cfg = GenTrainConfig(steps=100, n_ctf=48)
mech, abd, _ = train_stage1(mech, abd, train, gen_cfg, RngStream(0, 0).spawn("stage1"))

lambdas = [0.0, 0.5, 2.0, 10.0]
arms = {}
for arm in ("mmd2", "mean_mse"):
    cfg = FairTrainConfig(steps=250, fairness_loss=arm)
    points, failures = sweep(mech, abd, train, test, cfg, lambdas, repeats=2,
                             base_seed=0, method=f"{arm}-fairness")
    arms[arm] = points
    print(f"\n{arm} arm: {len(points)} points, {len(failures)} failures")
    for lam in lambdas:
        fs = [p.f for p in points if p.lambda_fair == lam]
        es = [p.e for p in points if p.lambda_fair == lam]
        print(f"  lambda {lam:<4} median F: {float(np.median(fs)):.5f}  "
              f"median E: {float(np.median(es)):.4f}")

report = compare(arms["mmd2"], arms["mean_mse"])
print("\nAUC comparison (smaller integral of F over E wins):")
print(json.dumps(report, indent=2, sort_keys=True))

os.makedirs("demo_out", exist_ok=True)
all_points = arms["mmd2"] + arms["mean_mse"]
curves = {
    "mmd2-fairness": fit_line(arms["mmd2"]),
    "mean_mse-fairness": fit_line(arms["mean_mse"]),
}
emit_plot(all_points, curves, os.path.join("demo_out", "tradeoff.svg"))
print("\nwrote demo_out/tradeoff.svg and demo_out/tradeoff.csv")
