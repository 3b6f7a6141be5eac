"""Run configuration: TOML files, CLI overrides, canonical digests.

A run is fully described by one nested config document.  Files are TOML;
flags override file values; the merged document is canonicalized (defaults
filled, values coerced) and hashed, and that digest is embedded in every
artifact the run produces so provenance can be checked later.
"""

from __future__ import annotations

import hashlib
import json
import os

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from .errors import ConfigError
from .fairness import FairTrainConfig
from .generation import GenTrainConfig


def _number(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}")
    return float(v)


def _integer(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}")
    return int(v)


def _boolean(v):
    if not isinstance(v, bool):
        raise ConfigError(f"expected a boolean, got {v!r}")
    return v


def _string(v):
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}")
    return v


def _rho(v):
    if isinstance(v, str):
        if v != "median":
            raise ConfigError(f"rho policy must be 'median' or a positive number, got {v!r}")
        return v
    return _number(v)


def _number_list(v):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"expected a nonempty list of numbers, got {v!r}")
    return [_number(x) for x in v]


def _int_list(v):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"expected a nonempty list of integers, got {v!r}")
    return [_integer(x) for x in v]


def _string_list(v):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"expected a nonempty list of strings, got {v!r}")
    return [_string(x) for x in v]


#: (default, coercer) per leaf; the merged config carries exactly these keys.
_SCHEMA = {
    "run": {
        "seed": (0, _integer),
        "out_dir": ("runs/default", _string),
    },
    "dataset": {
        "kind": ("synthetic", _string),
        "n": (5000, _integer),
        "train_fraction": (0.8, _number),
        "normalize": ("auto", lambda v: v if isinstance(v, bool) else _string(v)),
        "path": ("", _string),
        "sensitive_column": ("racepctblack", _string),
        "target_column": ("ViolentCrimesPerPop", _string),
        "scm_asset": ("", _string),
    },
    "stage1": {
        "mode": ("phased", _string),
        "lambda_gen": (1.0, _number),
        "lambda_pos": (1.0, _number),
        "lambda_ctf": (1.0, _number),
        "lambda_reg": (0.1, _number),
        "n_gen": (256, _integer),
        "q_gen": (32, _integer),
        "n_pos": (256, _integer),
        "q_pos": (4, _integer),
        "n_ctf": (64, _integer),
        "q_ctf": (4, _integer),
        "n_reg": (64, _integer),
        "steps": (200, _integer),
        "lr": (1e-3, _number),
        "rho_gen": ("median", _rho),
        "rho_pos": ("median", _rho),
        "rho_ctf": ("median", _rho),
        "pos_use_model_samples": (False, _boolean),
        "d_u": (0, _integer),          # 0 = auto: SCM dimension on synthetic, 8 on crimes
        "d_noise": (0, _integer),      # 0 = equal to d_u
        "hidden": ([32, 32], _int_list),
        "activation": ("tanh", _string),
    },
    "stage2": {
        "lambda_fair": (1.0, _number),
        "n_fair": (128, _integer),
        "q_intv": (4, _integer),
        "q_abd": (16, _integer),
        "steps": (400, _integer),
        "lr": (1e-3, _number),
        "fairness_loss": ("mmd2", _string),
        "intervention_sampler": ("standard_normal", _string),
        "crn_train": (True, _boolean),
        "crn_eval": (False, _boolean),
        "rho_fair": (1.0, _rho),
        "n_fair_eval": (0, _integer),
        "hidden": ([32, 32], _int_list),
    },
    "sweep": {
        "lambdas": ([0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0], _number_list),
        "repeats": (3, _integer),
        "arms": (["mmd2", "mean_mse"], _string_list),
    },
}

OUT_DIR_ENV = "NCMFAIR_OUT_DIR"


def load_config_file(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such config file: {path}")
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def parse_override_value(text: str):
    """Parse a --set value using TOML literal syntax, falling back to string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def build_config(file_doc: dict | None = None, overrides=()) -> dict:
    """Merge defaults <- file <- env <- overrides into the canonical document.

    ``overrides`` is an iterable of ("section.key", value); the output-dir
    environment variable beats the file but loses to explicit flags.  Unknown
    sections or keys are configuration errors.
    """
    doc = {sec: dict(keys) for sec, keys in (file_doc or {}).items()} if file_doc else {}
    for sec in doc:
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        if not isinstance(doc[sec], dict):
            raise ConfigError(f"config section [{sec}] must be a table")
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out:
        doc.setdefault("run", {})["out_dir"] = env_out
    for dotted, value in overrides:
        sec, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override '{dotted}' must look like section.key")
        doc.setdefault(sec, {})[key] = value
    merged: dict = {}
    for sec, keys in _SCHEMA.items():
        got = doc.get(sec, {})
        for key in got:
            if key not in keys:
                raise ConfigError(f"unknown config key {sec}.{key}")
        merged[sec] = {
            key: coerce(got[key]) if key in got else default
            for key, (default, coerce) in keys.items()
        }
    return merged


def config_digest(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form of the merged config.

    The output directory is a storage location, not an experiment parameter,
    so it is excluded: the same experiment written elsewhere produces
    byte-identical artifacts.
    """
    payload = {sec: {k: v for k, v in keys.items()
                     if not (sec == "run" and k == "out_dir")}
               for sec, keys in cfg.items()}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def stage1_train_config(cfg: dict) -> GenTrainConfig:
    s = cfg["stage1"]
    fields = {k: s[k] for k in (
        "lambda_gen", "lambda_pos", "lambda_ctf", "lambda_reg",
        "n_gen", "q_gen", "n_pos", "q_pos", "n_ctf", "q_ctf", "n_reg",
        "steps", "lr", "rho_gen", "rho_pos", "rho_ctf", "mode",
        "pos_use_model_samples",
    )}
    out = GenTrainConfig(**fields)
    out.validate()
    return out


def stage2_train_config(cfg: dict, lambda_fair: float | None = None) -> FairTrainConfig:
    s = cfg["stage2"]
    fields = {k: s[k] for k in (
        "lambda_fair", "n_fair", "q_intv", "q_abd", "steps", "lr",
        "fairness_loss", "intervention_sampler", "crn_train", "crn_eval",
        "rho_fair", "n_fair_eval",
    )}
    if lambda_fair is not None:
        fields["lambda_fair"] = float(lambda_fair)
    out = FairTrainConfig(**fields)
    out.validate()
    return out


def resolve_normalize(cfg: dict) -> bool:
    """'auto' keeps synthetic data in SCM units (so the analytic oracles share
    the model's coordinate system) and z-scores real data."""
    value = cfg["dataset"]["normalize"]
    if isinstance(value, bool):
        return value
    if value == "auto":
        return cfg["dataset"]["kind"] == "crimes"
    raise ConfigError(f"dataset.normalize must be true, false, or 'auto', got {value!r}")


def resolve_d_u(cfg: dict, scm_d_u: int | None) -> int:
    d_u = cfg["stage1"]["d_u"]
    if d_u > 0:
        return d_u
    if cfg["dataset"]["kind"] == "synthetic":
        if scm_d_u is None:
            raise ConfigError("synthetic d_u resolution needs the SCM")
        return scm_d_u
    return 8
