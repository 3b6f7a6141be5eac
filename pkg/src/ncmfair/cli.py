"""Command-line surface for reproducible experiments.

Subcommands: gen-data, train-ncm, train-fair, sweep, compare, plot, verify.
Every artifact embeds the digest of the merged run configuration; `verify`
re-derives the digest and checks the artifacts in an output directory.

Exit codes: 0 success, 2 argument/config error, 3 I/O error, 4 schema or
artifact-consistency error, 5 training divergence / numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import (
    build_config,
    config_digest,
    load_config_file,
    parse_override_value,
    resolve_d_u,
    resolve_normalize,
    stage1_train_config,
    stage2_train_config,
)
from .data import load_crimes, load_dataset_csv, save_dataset_csv, split
from .errors import (
    ArgumentError,
    ConfigError,
    ModelError,
    NcmFairError,
    NumericsError,
    SchemaError,
    TrainingError,
)
from .fairness import Predictor, evaluate, resolve_fair_kernel, train_fair
from .generation import (
    AbductorModel,
    MechanismModel,
    load_stage1_checkpoint,
    train_stage1,
)
from .nn import write_json_atomic
from .rng import RngStream
from .scm import LinearGaussianSCM, default_scm, sample_synthetic
from .tradeoff import (
    compare,
    emit_plot,
    fit_line,
    points_from_csv,
    points_to_csv,
    sweep,
)

log = logging.getLogger("ncmfair")

EXIT_OK = 0
EXIT_ARGUMENT = 2
EXIT_IO = 3
EXIT_SCHEMA = 4
EXIT_TRAINING = 5


def _merged_config(args) -> tuple[dict, str]:
    file_doc = load_config_file(args.config) if args.config else None
    overrides = []
    for item in getattr(args, "set", None) or []:
        dotted, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides.append((dotted.strip(), parse_override_value(value.strip())))
    if getattr(args, "seed", None) is not None:
        overrides.append(("run.seed", args.seed))
    if getattr(args, "out", None) is not None:
        overrides.append(("run.out_dir", args.out))
    if getattr(args, "mode", None) is not None:
        overrides.append(("stage1.mode", args.mode))
    if getattr(args, "no_ctf", False):
        overrides.append(("stage1.lambda_ctf", 0.0))
    if getattr(args, "lambda_fair", None) is not None:
        overrides.append(("stage2.lambda_fair", args.lambda_fair))
    cfg = build_config(file_doc, overrides)
    return cfg, config_digest(cfg)


def _data_dir(cfg) -> str:
    return os.path.join(cfg["run"]["out_dir"], "data")


def _stage1_dir(cfg) -> str:
    return os.path.join(cfg["run"]["out_dir"], "stage1")


def _stage2_dir(cfg) -> str:
    return os.path.join(cfg["run"]["out_dir"], "stage2")


def _sweep_dir(cfg) -> str:
    return os.path.join(cfg["run"]["out_dir"], "sweep")


def _load_scm(cfg) -> LinearGaussianSCM:
    asset = cfg["dataset"]["scm_asset"]
    return LinearGaussianSCM.load(asset) if asset else default_scm()


def _load_splits(cfg):
    data_dir = _data_dir(cfg)
    train = load_dataset_csv(os.path.join(data_dir, "train.csv"))
    test = load_dataset_csv(os.path.join(data_dir, "test.csv"))
    return train, test


def cmd_gen_data(args) -> int:
    cfg, digest = _merged_config(args)
    ds_cfg = cfg["dataset"]
    seed = cfg["run"]["seed"]
    data_dir = _data_dir(cfg)
    os.makedirs(data_dir, exist_ok=True)

    if ds_cfg["kind"] == "synthetic":
        scm = _load_scm(cfg)
        rng = RngStream(seed, 0).spawn("data")
        full = sample_synthetic(scm, ds_cfg["n"], rng)
        scm_doc = scm.to_doc()
        scm_doc["config_digest"] = digest
        write_json_atomic(os.path.join(data_dir, "scm.json"), scm_doc)
    elif ds_cfg["kind"] == "crimes":
        if not ds_cfg["path"]:
            raise ConfigError("dataset.path is required for kind='crimes'")
        full = load_crimes(ds_cfg["path"], ds_cfg["sensitive_column"],
                           ds_cfg["target_column"])
    else:
        raise ConfigError(f"unknown dataset.kind {ds_cfg['kind']!r}")

    split_rng = RngStream(seed, 0).spawn("data-split")
    train, test = split(full, ds_cfg["train_fraction"], split_rng,
                        normalize=resolve_normalize(cfg))
    save_dataset_csv(train, os.path.join(data_dir, "train.csv"), config_digest=digest)
    save_dataset_csv(test, os.path.join(data_dir, "test.csv"), config_digest=digest)
    manifest = {
        "kind": ds_cfg["kind"],
        "n_train": train.n,
        "n_test": test.n,
        "d_a": train.a.shape[1],
        "d_x": train.x.shape[1],
        "d_y": train.y.shape[1],
        "normalized": resolve_normalize(cfg),
        "config_digest": digest,
    }
    write_json_atomic(os.path.join(data_dir, "dataset_manifest.json"), manifest)
    print(f"wrote {train.n} train / {test.n} test rows to {data_dir}")
    return EXIT_OK


def cmd_train_ncm(args) -> int:
    cfg, digest = _merged_config(args)
    seed = cfg["run"]["seed"]
    train, _ = _load_splits(cfg)
    s1 = cfg["stage1"]

    scm_d_u = None
    if cfg["dataset"]["kind"] == "synthetic":
        scm_path = os.path.join(_data_dir(cfg), "scm.json")
        scm_d_u = LinearGaussianSCM.load(scm_path).d_u
    d_u = resolve_d_u(cfg, scm_d_u)
    d_noise = s1["d_noise"] if s1["d_noise"] > 0 else d_u

    init_rng = RngStream(seed, 0).spawn("stage1-init")
    mech = MechanismModel.build(train.a.shape[1], train.x.shape[1], d_u, init_rng,
                                hidden=tuple(s1["hidden"]), activation=s1["activation"])
    abd = AbductorModel.build(train.x.shape[1], train.a.shape[1], d_u, init_rng,
                              d_noise=d_noise, hidden=tuple(s1["hidden"]),
                              activation=s1["activation"])
    gen_cfg = stage1_train_config(cfg)
    train_rng = RngStream(seed, 0).spawn("stage1")
    train_stage1(mech, abd, train, gen_cfg, train_rng,
                 checkpoint_dir=_stage1_dir(cfg), config_digest=digest, seed=seed)
    print(f"stage-1 checkpoints written to {_stage1_dir(cfg)} (mode={gen_cfg.mode})")
    return EXIT_OK


def cmd_train_fair(args) -> int:
    cfg, digest = _merged_config(args)
    seed = cfg["run"]["seed"]
    train, test = _load_splits(cfg)
    mech, abd, _ = load_stage1_checkpoint(_stage1_dir(cfg))
    fair_cfg = stage2_train_config(cfg)
    lam = fair_cfg.lambda_fair
    tag = f"{lam:g}"

    init_rng = RngStream(seed, 0).spawn(f"predictor-init:{tag}")
    h = Predictor.build(train.x.shape[1], train.a.shape[1], train.y.shape[1],
                        init_rng, hidden=tuple(cfg["stage2"]["hidden"]))
    train_rng = RngStream(seed, 0).spawn(f"stage2:{tag}")
    h, history = train_fair(h, mech, abd, train, fair_cfg, train_rng)

    kernel = resolve_fair_kernel(train, fair_cfg)
    eval_rng = RngStream(seed, 0).spawn(f"eval:{tag}")
    metrics = evaluate(h, mech, abd, test, fair_cfg, kernel, eval_rng)
    metrics.update({"lambda_fair": lam, "seed": seed, "config_digest": digest})

    out_dir = _stage2_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    h.net.save(os.path.join(out_dir, f"predictor_lambda{tag}.json"),
               rng_seed=seed, config_digest=digest)
    write_json_atomic(os.path.join(out_dir, f"metrics_lambda{tag}.json"), metrics)
    rows = [(s, lp, lf, lt) for s, lp, lf, lt in history]
    _save_fair_history(rows, os.path.join(out_dir, f"history_lambda{tag}.csv"), digest)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _save_fair_history(rows, path, digest) -> None:
    lines = [f"# config_digest={digest}", "step,l_pred,l_fair,total"]
    for step, lp, lf, lt in rows:
        lines.append(f"{step},{lp!r},{lf!r},{lt!r}")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def cmd_sweep(args) -> int:
    cfg, digest = _merged_config(args)
    seed = cfg["run"]["seed"]
    train, test = _load_splits(cfg)
    mech, abd, _ = load_stage1_checkpoint(_stage1_dir(cfg))
    sweep_cfg = cfg["sweep"]

    all_points = []
    all_failures = []
    for arm in sweep_cfg["arms"]:
        arm_cfg = stage2_train_config(cfg)
        arm_cfg.fairness_loss = arm
        arm_cfg.validate()
        points, failures = sweep(mech, abd, train, test, arm_cfg,
                                 sweep_cfg["lambdas"], sweep_cfg["repeats"],
                                 base_seed=seed, method=f"{arm}-fairness",
                                 predictor_hidden=tuple(cfg["stage2"]["hidden"]))
        all_points.extend(points)
        all_failures.extend(failures)

    out_dir = _sweep_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    methods = sorted({p.method for p in all_points})
    curves = {}
    for m in methods:
        subset = [p for p in all_points if p.method == m]
        try:
            curves[m] = fit_line(subset)
        except ArgumentError:
            curves[m] = None
    svg_path = os.path.join(out_dir, "tradeoff.svg")
    emit_plot(all_points, curves, svg_path, config_digest=digest)

    if len(methods) == 2:
        report = compare([p for p in all_points if p.method == methods[0]],
                         [p for p in all_points if p.method == methods[1]])
        report.update({
            "config_digest": digest,
            "failures": all_failures,
            "integration": "intersection of observed E ranges (no extrapolation)",
        })
        write_json_atomic(os.path.join(out_dir, "comparison.json"), report)
        print(json.dumps({"verdict": report["verdict"], "auc": report["auc"]},
                         sort_keys=True))
    else:
        print(f"swept {len(methods)} arm(s); comparison requires exactly 2")
    return EXIT_OK


def _points_csv_digest(path) -> str | None:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if first.startswith("# config_digest="):
        return first.split("=", 1)[1]
    return None


def cmd_compare(args) -> int:
    points = points_from_csv(args.points)
    methods = sorted({p.method for p in points})
    if len(methods) != 2:
        raise ArgumentError(f"points file must contain exactly 2 methods, got {methods}")
    report = compare([p for p in points if p.method == methods[0]],
                     [p for p in points if p.method == methods[1]])
    digest = _points_csv_digest(args.points)
    if digest:
        report["config_digest"] = digest
    out_path = args.output or os.path.join(os.path.dirname(args.points) or ".",
                                           "comparison.json")
    write_json_atomic(out_path, report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_plot(args) -> int:
    points = points_from_csv(args.points)
    methods = sorted({p.method for p in points})
    curves = {}
    for m in methods:
        subset = [p for p in points if p.method == m]
        try:
            curves[m] = fit_line(subset)
        except ArgumentError:
            curves[m] = None
    out_path = args.output or (os.path.splitext(args.points)[0] + ".svg")
    emit_plot(points, curves, out_path, config_digest=_points_csv_digest(args.points))
    print(f"wrote {out_path}")
    return EXIT_OK


def _artifact_digests(root: str):
    for dirpath, _, filenames in os.walk(root):
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            if name.endswith(".json"):
                try:
                    with open(path, "r", encoding="utf-8") as fh:
                        doc = json.load(fh)
                except (OSError, json.JSONDecodeError):
                    continue
                if isinstance(doc, dict) and doc.get("config_digest"):
                    yield path, doc["config_digest"]
            elif name.endswith(".csv"):
                with open(path, "r", encoding="utf-8") as fh:
                    first = fh.readline().strip()
                if first.startswith("# config_digest="):
                    yield path, first.split("=", 1)[1]
            elif name.endswith(".svg"):
                with open(path, "r", encoding="utf-8") as fh:
                    head = fh.read(4096)
                marker = "<!-- config_digest="
                if marker in head:
                    start = head.index(marker) + len(marker)
                    yield path, head[start:head.index(" -->", start)]


def cmd_verify(args) -> int:
    cfg, digest = _merged_config(args)
    root = cfg["run"]["out_dir"]
    if not os.path.isdir(root):
        raise FileNotFoundError(f"output directory {root} does not exist")
    checked = 0
    mismatched = []
    for path, found in _artifact_digests(root):
        checked += 1
        status = "OK" if found == digest else "MISMATCH"
        if status == "MISMATCH":
            mismatched.append(path)
        print(f"{status} {path}")
    print(f"verified {checked} artifact(s), {len(mismatched)} mismatch(es)")
    if mismatched:
        raise SchemaError(f"{len(mismatched)} artifact(s) do not match the config digest")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncmfair",
        description="Counterfactually fair prediction experiments "
                    "(kernel-loss neural causal models).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="TOML config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (TOML literal syntax)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override run.out_dir "
                                     "(NCMFAIR_OUT_DIR also honored)")

    p = sub.add_parser("gen-data", help="sample/ingest the dataset and write splits")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-ncm", help="stage-1: train mechanism + abductor")
    common(p)
    p.add_argument("--mode", choices=["joint", "phased"], help="override stage1.mode")
    p.add_argument("--no-ctf", action="store_true",
                   help="ablation: disable the counterfactual-consistency loss")
    p.set_defaults(func=cmd_train_ncm)

    p = sub.add_parser("train-fair", help="stage-2: fairness fine-tune the predictor")
    common(p)
    p.add_argument("--lambda", dest="lambda_fair", type=float,
                   help="override stage2.lambda_fair")
    p.set_defaults(func=cmd_train_fair)

    p = sub.add_parser("sweep", help="lambda sweep over fairness arms; "
                                     "emits points CSV, SVG, comparison JSON")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="AUC comparison of a two-method points CSV")
    p.add_argument("--points", required=True, help="points CSV path")
    p.add_argument("--output", help="comparison JSON path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="render a points CSV to SVG")
    p.add_argument("--points", required=True, help="points CSV path")
    p.add_argument("--output", help="SVG path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("verify", help="check artifact/config digest consistency")
    common(p)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArgumentError, ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (TrainingError, NumericsError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NcmFairError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
