"""Tabular data: CSV ingestion driven by a JSON schema, and the synthetic
protected-class imbalance generator."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .fact import format_number


class DataError(ValueError):
    """Input data cannot be turned into a usable two-group dataset."""


class DegenerateDataError(DataError):
    """A protected group (or every row) is missing after processing."""


@dataclass(frozen=True)
class DatasetSchema:
    target_column: str
    positive_label: str
    protected_column: str
    protected_one_value: str
    feature_columns: tuple  # of (name, "numeric" | "categorical")
    missing_policy: str = "drop_row"
    missing_values: tuple = ("", "?", "NA", "NaN", "nan", "null")

    def __post_init__(self):
        feats = tuple((str(n), str(k)) for n, k in self.feature_columns)
        object.__setattr__(self, "feature_columns", feats)
        object.__setattr__(self, "missing_values", tuple(self.missing_values))
        if not feats:
            raise DataError("schema needs at least one feature column")
        names = [n for n, _ in feats]
        for special in (self.target_column, self.protected_column):
            if special in names:
                raise DataError(f"column {special!r} cannot be both a feature and target/protected")
        for name, kind in feats:
            if kind not in ("numeric", "categorical"):
                raise DataError(f"feature {name!r}: kind must be numeric or categorical, got {kind!r}")
        if self.missing_policy != "drop_row":
            raise DataError(f"missing_policy {self.missing_policy!r} unsupported (only drop_row)")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        d = dict(d)
        feats = d.pop("feature_columns", None)
        if feats is None:
            raise DataError("schema field 'feature_columns' missing")
        parsed = []
        for item in feats:
            if isinstance(item, dict):
                parsed.append((item["name"], item.get("kind", "numeric")))
            elif isinstance(item, str):
                parsed.append((item, "numeric"))
            else:
                parsed.append(tuple(item))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown schema field(s): {sorted(unknown)}")
        for required in ("target_column", "positive_label", "protected_column", "protected_one_value"):
            if required not in d:
                raise DataError(f"schema field {required!r} missing")
        d["positive_label"] = str(d["positive_label"])
        d["protected_one_value"] = str(d["protected_one_value"])
        return cls(feature_columns=tuple(parsed), **d)

    @classmethod
    def from_json(cls, path) -> "DatasetSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "target_column": self.target_column,
            "positive_label": self.positive_label,
            "protected_column": self.protected_column,
            "protected_one_value": self.protected_one_value,
            "feature_columns": [list(fc) for fc in self.feature_columns],
            "missing_policy": self.missing_policy,
            "missing_values": list(self.missing_values),
        }


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Encoded features ``X`` (n x d), binary ``y`` and ``s``, instance weights.

    ``source_rows`` maps every row back to its line in the source file
    (0-based, header excluded) so externally supplied columns can be aligned.
    """

    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    weights: np.ndarray = None
    feature_names: tuple = ()
    source_rows: np.ndarray = None

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        if X.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        n = X.shape[0]
        y = np.asarray(self.y).astype(np.int64)
        s = np.asarray(self.s).astype(np.int64)
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        rows = np.arange(n) if self.source_rows is None else np.asarray(self.source_rows, dtype=np.int64)
        if not (len(y) == len(s) == len(w) == len(rows) == n):
            raise DataError("X, y, s, weights must have the same number of rows")
        if not np.isin(y, (0, 1)).all() or not np.isin(s, (0, 1)).all():
            raise DataError("y and s must be binary")
        if np.any(w < 0) or (n and not np.any(w > 0)):
            raise DataError("weights must be non-negative and not all zero")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length does not match feature width")
        for name, val in (("X", X), ("y", y), ("s", s), ("weights", w), ("feature_names", names),
                          ("source_rows", rows)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def has_both_groups(self) -> bool:
        return bool(np.any(self.s == 0) and np.any(self.s == 1))

    def with_weights(self, weights) -> "TabularDataset":
        return replace(self, weights=np.asarray(weights, dtype=np.float64))

    def equals(self, other: "TabularDataset") -> bool:
        return (np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)
                and np.array_equal(self.s, other.s) and np.array_equal(self.weights, other.weights)
                and self.feature_names == other.feature_names)


def _require_groups(s, what="dataset"):
    for g in (0, 1):
        if not np.any(s == g):
            raise DegenerateDataError(f"protected group {g} absent from {what}")


def load_csv(path, schema: DatasetSchema) -> TabularDataset:
    """Read a header-first CSV and encode it according to ``schema``.

    Rows with a missing value in any used column are dropped; categorical
    features are one-hot encoded in order of first appearance.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, skipinitialspace=True)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        col = {name: j for j, name in enumerate(header)}
        used = [schema.target_column, schema.protected_column] + [n for n, _ in schema.feature_columns]
        for name in used:
            if name not in col:
                raise DataError(f"unknown column {name!r} (file has {header})")
        missing = set(schema.missing_values)
        records, rows = [], []
        for lineno, raw in enumerate(reader):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}: row {lineno + 2} has {len(raw)} fields, expected {len(header)}")
            vals = [raw[col[name]].strip() for name in used]
            if any(v in missing for v in vals):
                continue
            records.append(vals)
            rows.append(lineno)

    if not records:
        raise DegenerateDataError(f"{path}: no complete rows left after dropping missing values")

    y = np.array([r[0] == schema.positive_label for r in records], dtype=np.int64)
    s = np.array([r[1] == schema.protected_one_value for r in records], dtype=np.int64)
    columns, names = [], []
    for j, (name, kind) in enumerate(schema.feature_columns, start=2):
        values = [r[j] for r in records]
        if kind == "numeric":
            try:
                columns.append(np.array([float(v) for v in values]))
            except ValueError as exc:
                raise DataError(f"column {name!r}: unparsable numeric value ({exc})") from None
            names.append(name)
        else:
            levels = list(dict.fromkeys(values))
            arr = np.array(values, dtype=object)
            for level in levels:
                columns.append((arr == level).astype(np.float64))
                names.append(f"{name}={level}")
    _require_groups(s, str(path))
    X = np.column_stack(columns) if columns else np.zeros((len(records), 0))
    return TabularDataset(X, y, s, feature_names=tuple(names), source_rows=np.array(rows))


def write_csv(data: TabularDataset, path) -> None:
    """Write ``y, s`` and the feature columns with round-trip number formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y", "s", *data.feature_names])
        for i in range(data.n):
            writer.writerow([int(data.y[i]), int(data.s[i]), *(format_number(v) for v in data.X[i])])


def split(data: TabularDataset, indices, lenient: bool = False) -> TabularDataset:
    """Row subset (weights carried along).

    Raises when a protected group disappears unless ``lenient``.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise DataError("split needs a non-empty 1-d index array")
    if idx.min() < 0 or idx.max() >= data.n:
        raise IndexError(f"split index out of range [0, {data.n})")
    sub = TabularDataset(data.X[idx], data.y[idx], data.s[idx], data.weights[idx],
                         data.feature_names, data.source_rows[idx])
    if not lenient:
        _require_groups(sub.s, "split")
    return sub


@dataclass(frozen=True)
class SyntheticImbalanceConfig:
    p_y: float = 0.5
    p_s: float = 0.5
    n: int = 25000
    betas: tuple = (0.0, 1.0, 1.0, 0.5, 0.5)
    noise_sd: float = 1.0
    mu0: tuple = (2.0, 2.0)
    sigma0: tuple = ((5.0, 1.0), (1.0, 5.0))
    mu1: tuple = (-2.0, -2.0)
    sigma1: tuple = ((10.0, 1.0), (1.0, 3.0))
    seed: int = 0
    # "noisy": threshold the quantile of latent + noise (realised rate == p_y);
    # "latent": threshold the quantile of the noiseless latent score
    quantile_on: str = "noisy"

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "mu0", tuple(float(v) for v in self.mu0))
        object.__setattr__(self, "mu1", tuple(float(v) for v in self.mu1))
        object.__setattr__(self, "sigma0", tuple(tuple(float(v) for v in row) for row in self.sigma0))
        object.__setattr__(self, "sigma1", tuple(tuple(float(v) for v in row) for row in self.sigma1))
        if not (0.0 < self.p_y < 1.0 and 0.0 < self.p_s < 1.0):
            raise DataError("p_y and p_s must lie strictly between 0 and 1")
        if int(self.n) < 2:
            raise DataError("n must be at least 2")
        if len(self.betas) != 5:
            raise DataError("betas must hold five coefficients (b0..b4)")
        if not self.noise_sd >= 0:
            raise DataError("noise_sd must be non-negative")
        if self.quantile_on not in ("noisy", "latent"):
            raise DataError("quantile_on must be 'noisy' or 'latent'")
        for name in ("sigma0", "sigma1"):
            cov = np.array(getattr(self, name))
            if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
                raise DataError(f"{name} must be a symmetric 2x2 matrix")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise DataError(f"{name} is not positive definite")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticImbalanceConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown synthetic config field(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SyntheticImbalanceConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "p_y": self.p_y, "p_s": self.p_s, "n": self.n, "betas": list(self.betas),
            "noise_sd": self.noise_sd, "mu0": list(self.mu0), "sigma0": [list(r) for r in self.sigma0],
            "mu1": list(self.mu1), "sigma1": [list(r) for r in self.sigma1], "seed": self.seed,
            "quantile_on": self.quantile_on,
        }


def generate_imbalance(cfg: SyntheticImbalanceConfig) -> TabularDataset:
    """Two-feature Gaussian mixture with a group-dependent linear latent score.

    The label is ``latent + noise > threshold``. The threshold is the
    ``1 - p_y`` empirical quantile of ``latent + noise`` (default) or of the
    noiseless latent score (``quantile_on="latent"``), which biases the
    realised positive rate away from ``p_y`` in the tails.
    """
    rng = np.random.default_rng(cfg.seed)
    n = int(cfg.n)
    s = (rng.random(n) < cfg.p_s).astype(np.int64)
    z = rng.standard_normal((n, 2))
    X = np.empty((n, 2))
    for g, (mu, cov) in enumerate(((cfg.mu0, cfg.sigma0), (cfg.mu1, cfg.sigma1))):
        chol = np.linalg.cholesky(np.array(cov))
        rows = s == g
        X[rows] = np.array(mu) + z[rows] @ chol.T
    b0, b1, b2, b3, b4 = cfg.betas
    latent = b0 + b1 * X[:, 0] + b2 * X[:, 1] + s * (b3 * X[:, 0] + b4 * X[:, 1])
    noise = cfg.noise_sd * rng.standard_normal(n)
    score = latent + noise
    threshold = np.quantile(score if cfg.quantile_on == "noisy" else latent, 1.0 - cfg.p_y)
    y = (score > threshold).astype(np.int64)
    return TabularDataset(X, y, s, feature_names=("x1", "x2"))


def positive_rate_tolerance(p: float, n: int, k: float = 3.0) -> float:
    return k * math.sqrt(p * (1.0 - p) / n)
