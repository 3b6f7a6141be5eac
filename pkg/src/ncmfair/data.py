"""Dataset container, train/test splitting, and real-data ingestion.

A dataset is a list of (a, x, y) triplets stored column-blockwise: sensitive
attributes ``a``, remaining features ``x``, and targets ``y``.  Normalization
statistics are always computed on the training split and applied to both
splits; datasets are immutable after construction.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, SchemaError
from .nn import write_json_atomic
from .rng import RngStream

log = logging.getLogger(__name__)

#: Identifier / non-predictive columns removed from the crimes table by default.
DEFAULT_DROP_COLUMNS = ("state", "county", "community", "communityname", "fold")

MISSING_MARKER = "?"


@dataclass(frozen=True)
class NormStats:
    """Per-column z-score statistics, computed on a training split."""

    a_mean: np.ndarray
    a_std: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray


@dataclass(frozen=True)
class Dataset:
    a: np.ndarray
    x: np.ndarray
    y: np.ndarray
    a_names: tuple = ()
    x_names: tuple = ()
    y_names: tuple = ()
    norm: NormStats | None = None

    def __post_init__(self):
        for name in ("a", "x", "y"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.ndim != 2:
                raise ArgumentError(f"dataset block '{name}' must be 2-D")
            if not np.all(np.isfinite(arr)):
                raise ArgumentError(f"dataset block '{name}' contains non-finite values")
            object.__setattr__(self, name, arr)
        if not (self.a.shape[0] == self.x.shape[0] == self.y.shape[0]):
            raise ArgumentError("dataset blocks must have equal row counts")
        object.__setattr__(self, "a_names", tuple(self.a_names) or _default_names("a", self.a.shape[1]))
        object.__setattr__(self, "x_names", tuple(self.x_names) or _default_names("x", self.x.shape[1]))
        object.__setattr__(self, "y_names", tuple(self.y_names) or _default_names("y", self.y.shape[1]))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.a[idx], self.x[idx], self.y[idx],
                       self.a_names, self.x_names, self.y_names, self.norm)


def _default_names(prefix: str, d: int) -> tuple:
    return tuple(f"{prefix}{i}" for i in range(d))


def _zscore(arr: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (arr - mean) / std


def _train_stats(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    degenerate = std < 1e-12
    if np.any(degenerate):
        log.warning("constant column(s) in training split; std clamped to 1")
        std = np.where(degenerate, 1.0, std)
    return mean, std


def split(dataset: Dataset, train_fraction: float, rng: RngStream,
          normalize: bool = True) -> tuple[Dataset, Dataset]:
    """Shuffled, disjoint, exhaustive split; z-scores both sides with train stats."""
    if not (0.0 < train_fraction < 1.0):
        raise ArgumentError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = dataset.n
    n_train = int(round(n * train_fraction))
    if n_train < 1 or n_train >= n:
        raise ArgumentError(f"split of {n} rows at {train_fraction} leaves an empty side")
    perm = rng.permutation(n)
    idx_train, idx_test = perm[:n_train], perm[n_train:]
    train, test = dataset.take(idx_train), dataset.take(idx_test)
    if not normalize:
        return train, test
    a_m, a_s = _train_stats(train.a)
    x_m, x_s = _train_stats(train.x)
    y_m, y_s = _train_stats(train.y)
    stats = NormStats(a_m, a_s, x_m, x_s, y_m, y_s)

    def apply(ds: Dataset) -> Dataset:
        return Dataset(_zscore(ds.a, a_m, a_s), _zscore(ds.x, x_m, x_s),
                       _zscore(ds.y, y_m, y_s), ds.a_names, ds.x_names, ds.y_names, stats)

    return apply(train), apply(test)


def load_crimes(path, sensitive_column: str, target_column: str,
                drop_columns=DEFAULT_DROP_COLUMNS) -> Dataset:
    """Ingest the communities-and-crime style CSV (header row, '?' missing marker).

    Columns listed in ``drop_columns``, columns containing the missing marker,
    non-numeric columns, and constant columns are removed; the sensitive column
    becomes A, the target column Y, and the remainder X.  Returns raw
    (unnormalized) data; z-scoring happens at :func:`split` time from training
    statistics.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    if sensitive_column not in header:
        raise SchemaError(f"sensitive column '{sensitive_column}' not in header")
    if target_column not in header:
        raise SchemaError(f"target column '{target_column}' not in header")
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise SchemaError(f"row {i + 2} has {len(row)} fields, expected {width}")

    drop_lower = {c.lower() for c in drop_columns}
    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        cells = [row[j].strip() for row in rows]
        is_special = name in (sensitive_column, target_column)
        if any(c == MISSING_MARKER or c == "" for c in cells):
            if is_special:
                raise SchemaError(f"column '{name}' has missing values but is required")
            log.info("dropping column '%s': contains missing markers", name)
            continue
        if name.lower() in drop_lower and not is_special:
            continue
        try:
            values = np.array([float(c) for c in cells], dtype=np.float64)
        except ValueError:
            if is_special:
                raise SchemaError(f"column '{name}' is non-numeric but is required") from None
            log.info("dropping column '%s': non-numeric", name)
            continue
        if np.ptp(values) < 1e-12:
            if name == sensitive_column:
                raise SchemaError(f"sensitive column '{name}' is constant (degenerate)")
            log.warning("dropping column '%s': constant", name)
            continue
        columns[name] = values

    if sensitive_column not in columns:
        raise SchemaError(f"sensitive column '{sensitive_column}' unusable after filtering")
    if target_column not in columns:
        raise SchemaError(f"target column '{target_column}' unusable after filtering")
    a = columns.pop(sensitive_column)[:, None]
    y = columns.pop(target_column)[:, None]
    x_names = tuple(columns.keys())
    x = (np.stack([columns[c] for c in x_names], axis=1)
         if x_names else np.zeros((len(rows), 0)))
    log.info("ingested %d rows; realized X dimension is %d", len(rows), x.shape[1])
    if x.shape[1] == 0:
        raise SchemaError("no usable feature columns remain")
    return Dataset(a, x, y, (sensitive_column,), x_names, (target_column,))


# -- dataset cache (CSV + normalization sidecar) --------------------------------


def save_dataset_csv(dataset: Dataset, path, config_digest: str | None = None) -> None:
    """Write the dataset as CSV plus a `.norm.json` sidecar with z-score stats."""
    names = ([f"a:{c}" for c in dataset.a_names] + [f"x:{c}" for c in dataset.x_names]
             + [f"y:{c}" for c in dataset.y_names])
    block = np.concatenate([dataset.a, dataset.x, dataset.y], axis=1)
    lines = []
    if config_digest is not None:
        lines.append(f"# config_digest={config_digest}")
    lines.append(",".join(names))
    for row in block:
        lines.append(",".join(repr(float(v)) for v in row))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)

    sidecar = {"config_digest": config_digest, "columns": []}
    if dataset.norm is not None:
        stats = dataset.norm
        for role, cols, mean, std in (("a", dataset.a_names, stats.a_mean, stats.a_std),
                                      ("x", dataset.x_names, stats.x_mean, stats.x_std),
                                      ("y", dataset.y_names, stats.y_mean, stats.y_std)):
            for c, m, s in zip(cols, mean, std):
                sidecar["columns"].append(
                    {"column": f"{role}:{c}", "mean": float(m), "std": float(s)}
                )
    write_json_atomic(f"{os.fspath(path)}.norm.json", sidecar)


def load_dataset_csv(path) -> Dataset:
    """Round-trip loader for :func:`save_dataset_csv` output."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64)
    roles = {"a": [], "x": [], "y": []}
    names = {"a": [], "x": [], "y": []}
    for j, col in enumerate(header):
        role, _, name = col.partition(":")
        if role not in roles:
            raise SchemaError(f"unexpected column '{col}' in cached dataset")
        roles[role].append(j)
        names[role].append(name)

    norm = None
    sidecar_path = f"{os.fspath(path)}.norm.json"
    if os.path.exists(sidecar_path):
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("columns"):
            by_col = {c["column"]: c for c in doc["columns"]}

            def stats_for(role):
                cols = [f"{role}:{n}" for n in names[role]]
                return (np.array([by_col[c]["mean"] for c in cols]),
                        np.array([by_col[c]["std"] for c in cols]))

            (a_m, a_s), (x_m, x_s), (y_m, y_s) = (stats_for("a"), stats_for("x"), stats_for("y"))
            norm = NormStats(a_m, a_s, x_m, x_s, y_m, y_s)
    return Dataset(data[:, roles["a"]], data[:, roles["x"]], data[:, roles["y"]],
                   tuple(names["a"]), tuple(names["x"]), tuple(names["y"]), norm)
