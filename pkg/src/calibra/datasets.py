"""Synthetic toy problems, CSV ingestion, splitting and standardization."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, DomainError

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"

TOY_DOMAINS = {
    "G": (0.0, 1.0, 1),
    "Y": (0.0, 1.0, 1),
    "W": (0.0, math.pi, 1),
    "5D": (0.0, 1.0, 5),
}


def toy_mean(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if name == "G":
        return 2.0 * np.sin(2.0 * np.pi * x)
    if name == "Y":
        return 2.0 * (np.exp(-30.0 * (x - 0.25) ** 2) + np.sin(np.pi * x**2)) - 2.0
    if name == "W":
        return np.sin(2.5 * x) * np.sin(1.5 * x)
    if name == "5D":
        return np.zeros(np.atleast_2d(x).shape[0])
    raise DomainError(f"unknown toy dataset {name!r}")


def toy_sigma(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if name == "G":
        return 0.5 * x + 0.5
    if name == "Y":
        return np.exp(np.sin(2.0 * np.pi * x)) / 3.0
    if name == "W":
        return 0.01 + 0.25 * (1.0 - np.sin(2.5 * x)) ** 2
    if name == "5D":
        x = np.atleast_2d(x)
        return 0.45 * (np.cos(np.pi + 5.0 * x.sum(axis=1)) + 1.2)
    raise DomainError(f"unknown toy dataset {name!r}")


def _freeze(a):
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    true_mean: np.ndarray | None = None
    true_sigma: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)
    columns: tuple = ()
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "y", _freeze(np.ravel(self.y)))
        object.__setattr__(self, "true_mean", _freeze(self.true_mean))
        object.__setattr__(self, "true_sigma", _freeze(self.true_sigma))
        object.__setattr__(self, "extra", {k: _freeze(v) for k, v in self.extra.items()})
        if self.x.shape[0] != self.y.shape[0]:
            raise ContractError("x and y row counts differ")
        for name in ("true_mean", "true_sigma"):
            col = getattr(self, name)
            if col is not None and col.shape != self.y.shape:
                raise ContractError(f"{name} must match y in length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DomainError("dataset contains non-finite values")
        if not self.columns:
            names = tuple(f"x{i + 1}" for i in range(self.dim))
            object.__setattr__(self, "columns", names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            x=self.x[idx],
            y=self.y[idx],
            true_mean=None if self.true_mean is None else self.true_mean[idx],
            true_sigma=None if self.true_sigma is None else self.true_sigma[idx],
            provenance=dict(self.provenance),
            columns=self.columns,
            extra={k: v[idx] for k, v in self.extra.items()},
        )


def gen_toy(name: str, n: int, seed: int = 0) -> Dataset:
    """Sample ``n`` points of one of the toy problems G, Y, W or 5D.

    Inputs are uniform on the problem's domain and targets are drawn from
    N(f(x), sigma(x)^2).
    """
    if name not in TOY_DOMAINS:
        raise DomainError(f"unknown toy dataset {name!r}; expected one of {sorted(TOY_DOMAINS)}")
    if n < 1:
        raise DomainError("n must be >= 1")
    lo, hi, d = TOY_DOMAINS[name]
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, size=(n, d))
    mean = toy_mean(name, x)
    sigma = toy_sigma(name, x)
    y = mean + sigma * rng.standard_normal(n)
    prov = {"generator": name, "n": n, "seed": seed, "rng": RNG_ALGORITHM}
    return Dataset(x=x, y=y, true_mean=mean, true_sigma=sigma, provenance=prov)


ANNOTATION_PREFIXES = ("sigma_", "pred_")


def write_csv(path, dataset: Dataset, extra_columns: Mapping[str, np.ndarray] | None = None):
    """Write ``dataset`` as CSV: x columns, y, then true_mean/true_sigma if known.

    Floats are written with ``repr`` so that reading back is bit-exact.
    """
    cols = {name: dataset.x[:, j] for j, name in enumerate(dataset.columns)}
    cols["y"] = dataset.y
    if dataset.true_mean is not None:
        cols["true_mean"] = dataset.true_mean
    if dataset.true_sigma is not None:
        cols["true_sigma"] = dataset.true_sigma
    for k, v in {**dataset.extra, **(extra_columns or {})}.items():
        cols[k] = np.asarray(v)
    write_columns(path, cols)


def write_columns(path, columns: Mapping[str, Sequence[float]]):
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([repr(float(v)) for v in row])


def read_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ContractError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        rows = []
        bad = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ContractError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ContractError(f"{path}:{lineno}: cannot parse number ({exc})") from None
            if not all(math.isfinite(v) for v in vals):
                bad.append(lineno)
            rows.append(vals)
    if bad:
        raise DomainError(f"{path}: non-finite values in rows {bad}")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _is_annotation(name: str) -> bool:
    return name == "eps" or name.startswith(ANNOTATION_PREFIXES)


def load_csv(path, schema: Mapping | None = None) -> Dataset:
    """Read a CSV into a Dataset.

    ``schema`` maps roles to columns: ``{"x": [...], "y": "name"}`` plus
    optional ``"true_mean"``, ``"true_sigma"`` and ``"extra"`` (list of
    columns kept alongside, e.g. precomputed predictions). By default the
    last column named ``y`` (or the last column) is the target, annotation
    columns (``eps`` and names starting with ``sigma_`` or ``pred_``) go to
    ``extra``, and every other column that is not y/true_mean/true_sigma is
    an input.
    """
    cols = read_columns(path)
    names = list(cols)
    schema = dict(schema or {})
    y_name = schema.get("y", "y" if "y" in cols else names[-1])
    if "extra" not in schema and "x" not in schema:
        schema["extra"] = [c for c in names if _is_annotation(c) and c != y_name]
    known = {y_name, "true_mean", "true_sigma", *schema.get("extra", [])}
    x_names = list(schema.get("x") or [c for c in names if c not in known])
    missing = [c for c in [*x_names, y_name, *schema.get("extra", [])] if c not in cols]
    for role in ("true_mean", "true_sigma"):
        if role in schema and schema[role] not in cols:
            missing.append(schema[role])
    if missing:
        raise ContractError(f"{path}: missing columns {missing}; available {names}")
    if not x_names:
        raise ContractError(f"{path}: no input columns")
    tm = schema.get("true_mean", "true_mean")
    ts = schema.get("true_sigma", "true_sigma")
    return Dataset(
        x=np.column_stack([cols[c] for c in x_names]),
        y=cols[y_name],
        true_mean=cols.get(tm),
        true_sigma=cols.get(ts),
        provenance={"file": str(path), "sha256": file_hash(path)},
        columns=tuple(x_names),
        extra={c: cols[c] for c in schema.get("extra", [])},
    )


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.33, 0.33, 0.34)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise DomainError(f"split fractions must be three positives summing to 1, got {fr}")
        object.__setattr__(self, "fractions", fr)


def split_indices(n: int, spec: SplitSpec):
    """Seeded shuffle followed by a contiguous cut into train/val/test."""
    if n < 3:
        raise DomainError("need at least 3 samples to split")
    n_train = int(round(spec.fractions[0] * n))
    n_val = int(round(spec.fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DomainError(f"split {spec.fractions} of {n} samples leaves an empty partition")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(dataset: Dataset, spec: SplitSpec):
    return tuple(dataset.subset(idx) for idx in split_indices(dataset.n, spec))


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine map ``(v - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values) -> "Standardizer":
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        mean = v.mean(axis=0)
        scale = v.std(axis=0)
        flat = ~(scale > 0)
        if np.any(flat):
            log.warning("zero-variance column(s) %s passed through unscaled", np.flatnonzero(flat).tolist())
            mean = np.where(flat, 0.0, mean)
            scale = np.where(flat, 1.0, scale)
        return cls(mean=mean, scale=scale)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))

    def transform(self, values):
        v = np.asarray(values, dtype=float)
        if v.ndim == 1 and self.mean.size == 1:
            return (v - self.mean[0]) / self.scale[0]
        return (v - self.mean) / self.scale

    def inverse(self, values):
        v = np.asarray(values, dtype=float)
        if v.ndim == 1 and self.mean.size == 1:
            return v * self.scale[0] + self.mean[0]
        return v * self.scale + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=float), scale=np.asarray(d["scale"], dtype=float))


def standardize(train: Dataset, *others: Dataset, target: bool = True):
    """Standardize inputs (and optionally targets) with training statistics.

    Returns ``(train', [others'...], (x_transform, y_transform))``. Other
    partitions are mapped with the training transform, never their own.
    True mean/sigma columns follow the target transform.
    """
    xt = Standardizer.fit(train.x)
    yt = Standardizer.fit(train.y) if target else Standardizer.identity(1)

    def apply(ds):
        s = yt.scale[0]
        return Dataset(
            x=xt.transform(ds.x),
            y=yt.transform(ds.y),
            true_mean=None if ds.true_mean is None else yt.transform(ds.true_mean),
            true_sigma=None if ds.true_sigma is None else ds.true_sigma / s,
            provenance=dict(ds.provenance),
            columns=ds.columns,
            extra=dict(ds.extra),
        )

    return apply(train), [apply(o) for o in others], (xt, yt)


# Synthetic heteroskedastic regression tables with the row/column counts of
# two common UCI benchmarks. Used where the real files are not available.
TABULAR_STANDINS = {"energy_like": (768, 8), "concrete_like": (1030, 8)}


def _standin_mean_sigma(name, x):
    if name == "energy_like":
        f = 10 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20 * (x[:, 2] - 0.5) ** 2 + 10 * x[:, 3] + 5 * x[:, 4]
        s = 0.2 + 2.0 * x[:, 5] ** 2 + 1.0 * x[:, 0] * x[:, 6]
    elif name == "concrete_like":
        f = 30 * x[:, 0] - 20 * x[:, 1] ** 2 + 15 * x[:, 2] * x[:, 3] + 8 * np.sin(3 * x[:, 4]) + 4 * x[:, 5] * x[:, 6]
        s = 1.0 + 4.0 * np.exp(-((x[:, 7] - 0.3) ** 2) / 0.05) + 2.0 * x[:, 1]
    else:
        raise DomainError(f"unknown stand-in table {name!r}; expected one of {sorted(TABULAR_STANDINS)}")
    return f, s


def gen_tabular(name: str, seed: int = 0) -> Dataset:
    n, d = TABULAR_STANDINS.get(name, (None, None))
    if n is None:
        raise DomainError(f"unknown stand-in table {name!r}; expected one of {sorted(TABULAR_STANDINS)}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, d))
    f, s = _standin_mean_sigma(name, x)
    y = f + s * rng.standard_normal(n)
    return Dataset(x=x, y=y, true_mean=f, true_sigma=s,
                   provenance={"generator": name, "n": n, "seed": seed, "rng": RNG_ALGORITHM})
