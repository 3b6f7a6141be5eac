import json
import os

import numpy as np
import pytest

from ncmfair.cli import main
from ncmfair.config import (
    build_config,
    config_digest,
    parse_override_value,
    resolve_d_u,
    resolve_normalize,
    stage1_train_config,
    stage2_train_config,
)
from ncmfair.errors import ConfigError


class TestConfig:
    def test_defaults_fill(self):
        cfg = build_config()
        assert cfg["dataset"]["kind"] == "synthetic"
        assert cfg["stage1"]["mode"] == "phased"
        assert cfg["sweep"]["repeats"] == 3

    def test_digest_stable_and_sensitive(self):
        d1 = config_digest(build_config())
        d2 = config_digest(build_config())
        d3 = config_digest(build_config(overrides=[("run.seed", 1)]))
        assert d1 == d2
        assert d1 != d3
        assert len(d1) == 64

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            build_config({"nosuch": {}})
        with pytest.raises(ConfigError):
            build_config({"stage1": {"bogus_key": 1}})

    def test_type_coercion(self):
        cfg = build_config({"stage1": {"lambda_ctf": 2}})
        assert cfg["stage1"]["lambda_ctf"] == 2.0
        with pytest.raises(ConfigError):
            build_config({"stage1": {"steps": "many"}})
        with pytest.raises(ConfigError):
            build_config({"stage1": {"steps": 1.5}})

    def test_override_value_parsing(self):
        assert parse_override_value("3") == 3
        assert parse_override_value("3.5") == 3.5
        assert parse_override_value("true") is True
        assert parse_override_value('"phased"') == "phased"
        assert parse_override_value("[1, 2]") == [1, 2]
        assert parse_override_value("crimes") == "crimes"

    def test_env_var_out_dir(self, monkeypatch):
        monkeypatch.setenv("NCMFAIR_OUT_DIR", "/tmp/elsewhere")
        # the environment beats the file ...
        cfg = build_config({"run": {"out_dir": "here"}})
        assert cfg["run"]["out_dir"] == "/tmp/elsewhere"
        # ... and explicit flags beat the environment
        cfg = build_config(overrides=[("run.out_dir", "flagged")])
        assert cfg["run"]["out_dir"] == "flagged"

    def test_digest_ignores_out_dir(self):
        d1 = config_digest(build_config({"run": {"out_dir": "a"}}))
        d2 = config_digest(build_config({"run": {"out_dir": "b"}}))
        assert d1 == d2

    def test_train_config_builders(self):
        cfg = build_config({"stage1": {"steps": 7}, "stage2": {"lambda_fair": 2.5}})
        s1 = stage1_train_config(cfg)
        assert s1.steps == 7 and s1.mode == "phased"
        s2 = stage2_train_config(cfg)
        assert s2.lambda_fair == 2.5
        s2b = stage2_train_config(cfg, lambda_fair=0.5)
        assert s2b.lambda_fair == 0.5

    def test_resolvers(self):
        cfg = build_config()
        assert resolve_normalize(cfg) is False  # synthetic stays in SCM units
        cfg_crimes = build_config({"dataset": {"kind": "crimes"}})
        assert resolve_normalize(cfg_crimes) is True
        assert resolve_d_u(cfg, scm_d_u=5) == 5
        assert resolve_d_u(cfg_crimes, scm_d_u=None) == 8
        cfg_pinned = build_config({"stage1": {"d_u": 3}})
        assert resolve_d_u(cfg_pinned, scm_d_u=5) == 3


TINY_CONFIG = """
[run]
seed = 11
out_dir = "{out}"

[dataset]
n = 400
train_fraction = 0.8

[stage1]
steps = 6
n_gen = 32
q_gen = 8
n_pos = 32
q_pos = 2
n_ctf = 8
q_ctf = 2
n_reg = 8
hidden = [8]

[stage2]
steps = 6
n_fair = 16
q_intv = 2
q_abd = 4
n_fair_eval = 32
hidden = [8]

[sweep]
lambdas = [0.0, 1.0]
repeats = 1
"""


@pytest.fixture()
def tiny_run(tmp_path):
    out = tmp_path / "run"
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(TINY_CONFIG.format(out=out), encoding="utf-8")
    return cfg_path, out


def read_bytes_map(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


class TestCliPipeline:
    def test_full_pipeline_and_determinism(self, tiny_run, tmp_path):
        cfg_path, out = tiny_run
        assert main(["gen-data", "-c", str(cfg_path)]) == 0
        assert main(["train-ncm", "-c", str(cfg_path)]) == 0
        assert main(["train-fair", "-c", str(cfg_path), "--lambda", "1"]) == 0
        assert main(["sweep", "-c", str(cfg_path)]) == 0

        sweep_dir = out / "sweep"
        assert (sweep_dir / "tradeoff.svg").exists()
        assert (sweep_dir / "tradeoff.csv").exists()
        assert (sweep_dir / "comparison.json").exists()

        snapshot = read_bytes_map(out)

        # rerun the whole pipeline into the same tree: byte-identical artifacts
        assert main(["gen-data", "-c", str(cfg_path)]) == 0
        assert main(["train-ncm", "-c", str(cfg_path)]) == 0
        assert main(["train-fair", "-c", str(cfg_path), "--lambda", "1"]) == 0
        assert main(["sweep", "-c", str(cfg_path)]) == 0
        assert read_bytes_map(out) == snapshot

    def test_verify_ok_then_mismatch(self, tiny_run):
        cfg_path, out = tiny_run
        main(["gen-data", "-c", str(cfg_path)])
        assert main(["verify", "-c", str(cfg_path)]) == 0
        # changing the config invalidates every artifact digest
        assert main(["verify", "-c", str(cfg_path), "--set", "run.seed=99"]) == 4

    def test_mode_and_ablation_flags_recorded(self, tiny_run):
        cfg_path, out = tiny_run
        main(["gen-data", "-c", str(cfg_path)])
        assert main(["train-ncm", "-c", str(cfg_path), "--mode", "joint"]) == 0
        manifest = json.loads((out / "stage1" / "manifest.json").read_text())
        assert manifest["config"]["mode"] == "joint"
        assert main(["train-ncm", "-c", str(cfg_path), "--mode", "phased"]) == 0
        manifest = json.loads((out / "stage1" / "manifest.json").read_text())
        assert manifest["config"]["mode"] == "phased"
        assert main(["train-ncm", "-c", str(cfg_path), "--no-ctf"]) == 0
        manifest = json.loads((out / "stage1" / "manifest.json").read_text())
        assert manifest["config"]["lambda_ctf"] == 0.0

    def test_metrics_json_fields(self, tiny_run):
        cfg_path, out = tiny_run
        main(["gen-data", "-c", str(cfg_path)])
        main(["train-ncm", "-c", str(cfg_path)])
        main(["train-fair", "-c", str(cfg_path), "--lambda", "0.5"])
        doc = json.loads((out / "stage2" / "metrics_lambda0.5.json").read_text())
        for key in ("lambda_fair", "seed", "mse", "explained_variance",
                    "fair_mmd", "fair_mean_mse", "config_digest"):
            assert key in doc
        assert doc["lambda_fair"] == 0.5

    def test_compare_and_plot_commands(self, tiny_run):
        cfg_path, out = tiny_run
        main(["gen-data", "-c", str(cfg_path)])
        main(["train-ncm", "-c", str(cfg_path)])
        main(["sweep", "-c", str(cfg_path)])
        points = str(out / "sweep" / "tradeoff.csv")
        assert main(["compare", "--points", points,
                     "--output", str(out / "cmp.json")]) == 0
        doc = json.loads((out / "cmp.json").read_text())
        assert "verdict" in doc and "auc" in doc
        assert main(["plot", "--points", points,
                     "--output", str(out / "replot.svg")]) == 0
        assert (out / "replot.svg").exists()

    def test_exit_codes(self, tiny_run, tmp_path):
        cfg_path, out = tiny_run
        # missing config file -> I/O error
        assert main(["gen-data", "-c", str(tmp_path / "absent.toml")]) == 3
        # bad config value -> argument/config error
        assert main(["gen-data", "-c", str(cfg_path),
                     "--set", "dataset.kind=nosuch"]) == 2
        # crimes without a path -> config error
        assert main(["gen-data", "-c", str(cfg_path),
                     "--set", 'dataset.kind="crimes"']) == 2
        # training before gen-data -> I/O error
        fresh = tmp_path / "fresh.toml"
        fresh.write_text(TINY_CONFIG.format(out=tmp_path / "fresh_run"), encoding="utf-8")
        assert main(["train-ncm", "-c", str(fresh)]) == 3

    def test_gen_data_reference_split_sizes(self, tmp_path):
        out = tmp_path / "ref"
        cfg = tmp_path / "ref.toml"
        cfg.write_text(
            f"""
[run]
seed = 0
out_dir = "{out}"

[dataset]
n = 5000
train_fraction = 0.8
""",
            encoding="utf-8",
        )
        assert main(["gen-data", "-c", str(cfg)]) == 0
        manifest = json.loads((out / "data" / "dataset_manifest.json").read_text())
        assert manifest["n_train"] == 4000 and manifest["n_test"] == 1000

    def test_gen_data_crimes_roundtrip(self, tmp_path):
        rows = ["state,communityname,racepct,f1,f2,target"]
        rng = np.random.default_rng(0)
        for i in range(40):
            vals = rng.uniform(0.0, 1.0, 4)
            rows.append(f"{i},name{i},{vals[0]:.3f},{vals[1]:.3f},{vals[2]:.3f},{vals[3]:.3f}")
        csv_path = tmp_path / "crimes.csv"
        csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        out = tmp_path / "crun"
        cfg = tmp_path / "crimes.toml"
        cfg.write_text(
            f"""
[run]
seed = 1
out_dir = "{out}"

[dataset]
kind = "crimes"
path = "{csv_path}"
sensitive_column = "racepct"
target_column = "target"
train_fraction = 0.8
""",
            encoding="utf-8",
        )
        assert main(["gen-data", "-c", str(cfg)]) == 0
        manifest = json.loads((out / "data" / "dataset_manifest.json").read_text())
        assert manifest["kind"] == "crimes"
        assert manifest["n_train"] == 32 and manifest["n_test"] == 8
        assert manifest["normalized"] is True
