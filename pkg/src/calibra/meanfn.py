"""Black-box mean functions f(x) and the residuals they induce.

The variance estimators only ever see ``eps = y - f(x)``; these providers
exist so that the toy and tabular protocols can be run end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from . import nn
from .datasets import Dataset, Standardizer, toy_mean
from .errors import ContractError, DomainError, FitError
from .optim import OptimOptions, multi_start

MEAN_KINDS = ("exact_toy", "kernel_ridge", "network_mse", "column")
LENGTH_FACTORS = (0.05, 0.1, 0.2, 0.5, 1.0)
RIDGE_FACTORS = (1e-6, 1e-4, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class MeanModel:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MEAN_KINDS:
            raise DomainError(f"unknown mean kind {self.kind!r}")

    def predict(self, x, dataset: Dataset | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        p = self.params
        if self.kind == "exact_toy":
            return toy_mean(p["name"], x)
        if self.kind == "kernel_ridge":
            K = _rbf(x, p["x_train"], p["length_scale"])
            return K @ p["alpha"] + p["offset"]
        if self.kind == "network_mse":
            z = nn.forward(p["params"], p["sizes"], p["x_transform"].transform(x))
            return p["y_transform"].inverse(z)
        # column: predictions travel with the data, not with the model
        col = None
        if dataset is not None:
            col = dataset.extra.get(p["column"])
            if col is None and p["column"] == "true_mean":
                col = dataset.true_mean
        if col is None:
            raise ContractError(f"column mean needs dataset column {p['column']!r}")
        col = np.asarray(col, dtype=float)
        return dataset.y - col if p.get("holds") == "error" else col


def exact_toy(name: str) -> MeanModel:
    return MeanModel("exact_toy", {"name": name})


def column(name: str, holds: str = "prediction") -> MeanModel:
    """Mean taken from a data column holding predictions (or errors)."""
    if holds not in ("prediction", "error"):
        raise DomainError("holds must be 'prediction' or 'error'")
    return MeanModel("column", {"column": name, "holds": holds})


def _rbf(a, b, length_scale):
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * length_scale**2))


def _kr_solve(x, y, length_scale, ridge):
    K = _rbf(x, x, length_scale)
    K[np.diag_indices_from(K)] += ridge
    try:
        c = linalg.cho_factor(K, lower=True, check_finite=False)
        return linalg.cho_solve(c, y, check_finite=False)
    except linalg.LinAlgError:
        alpha, *_ = linalg.lstsq(K, y, check_finite=False)
        if not np.all(np.isfinite(alpha)):
            raise FitError(f"kernel system singular (length {length_scale:g}, ridge {ridge:g})")
        return alpha


def fit_kernel_ridge(x, y, grid=None, val=None, n_folds: int = 5, seed: int = 0) -> MeanModel:
    """RBF kernel ridge regression with grid-searched hyperparameters.

    ``grid`` is a list of ``(length_scale, ridge)`` pairs; by default length
    scales are fractions of the input domain width and ridges fractions of
    var(y). With ``val=(x_val, y_val)`` the grid point with the lowest
    validation MSE wins; otherwise ``n_folds``-fold cross-validation is used.
    The final model is fitted on ``(x, y)`` only.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    if y.size < 5:
        raise DomainError("fit_kernel_ridge needs at least 5 samples")
    offset = float(np.mean(y))
    yc = y - offset
    if grid is None:
        width = float(np.max(np.ptp(x, axis=0))) or 1.0
        var = float(np.var(y)) or 1.0
        grid = [(lf * width, rf * var) for lf in LENGTH_FACTORS for rf in RIDGE_FACTORS]

    def val_mse(ls, ridge):
        if val is not None:
            xv, yv = np.asarray(val[0], dtype=float), np.asarray(val[1], dtype=float)
            if xv.ndim == 1:
                xv = xv[:, None]
            alpha = _kr_solve(x, yc, ls, ridge)
            return float(np.mean((_rbf(xv, x, ls) @ alpha + offset - yv) ** 2))
        folds = np.array_split(np.random.default_rng(seed).permutation(y.size), min(n_folds, y.size))
        err = 0.0
        for f in folds:
            mask = np.ones(y.size, bool)
            mask[f] = False
            alpha = _kr_solve(x[mask], yc[mask], ls, ridge)
            err += float(np.sum((_rbf(x[f], x[mask], ls) @ alpha - yc[f]) ** 2))
        return err / y.size

    scores = [(val_mse(ls, r), ls, r) for ls, r in grid]
    best_mse, ls, ridge = min(scores, key=lambda t: t[0])
    alpha = _kr_solve(x, yc, ls, ridge)
    return MeanModel("kernel_ridge", {
        "x_train": x, "alpha": alpha, "offset": offset,
        "length_scale": ls, "ridge": ridge, "selection_mse": best_mse,
    })


def fit_network_mse(x, y, splits, opts: OptimOptions | None = None, hidden=nn.DEFAULT_HIDDEN) -> MeanModel:
    """Mean network with the variance network's architecture and a linear output.

    Trained full-batch on mean squared error of standardized targets, with
    early stopping on the validation partition and best-of-restarts.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    train_idx, val_idx = (np.asarray(s, dtype=int) for s in splits)
    if train_idx.size < 5:
        raise DomainError("fit_network_mse needs at least 5 training samples")
    opts = opts or OptimOptions(max_iters=2000)
    xt = Standardizer.fit(x[train_idx])
    yt = Standardizer.fit(y[train_idx])
    X_tr, X_va = xt.transform(x[train_idx]), xt.transform(x[val_idx])
    y_tr, y_va = yt.transform(y[train_idx]), yt.transform(y[val_idx])
    sizes = nn.layer_sizes(x.shape[1], hidden)
    n = y_tr.size

    def obj(theta):
        out, state = nn.forward(theta, sizes, X_tr, keep=True)
        r = out - y_tr
        val = float(r @ r) / n
        if not math.isfinite(val):
            return math.inf, np.full(theta.size, np.nan)
        return val, nn.backward(theta, sizes, state, 2.0 * r / n)

    def validation(theta):
        r = nn.forward(theta, sizes, X_va) - y_va
        return float(r @ r) / r.size

    res = multi_start(obj, lambda rng: nn.init_params(sizes, rng), opts,
                      validation if val_idx.size else None)
    return MeanModel("network_mse", {
        "params": res.x, "sizes": tuple(sizes), "x_transform": xt, "y_transform": yt,
        "train_mse": res.fun, "val_mse": res.val_fun,
    })


def residuals(data: Dataset, mean: MeanModel) -> np.ndarray:
    """Errors ``y - f(x)`` in sample order."""
    return data.y - mean.predict(data.x, dataset=data)


def mean_to_dict(mean: MeanModel) -> dict:
    """JSON-ready form of a fitted mean (arrays become lists)."""
    p = mean.params
    if mean.kind in ("exact_toy", "column"):
        params = dict(p)
    elif mean.kind == "kernel_ridge":
        params = {"x_train": p["x_train"].tolist(), "alpha": p["alpha"].tolist(), "offset": p["offset"],
                  "length_scale": p["length_scale"], "ridge": p["ridge"]}
    else:
        params = {"params": p["params"].tolist(), "sizes": list(p["sizes"]),
                  "x_transform": p["x_transform"].to_dict(), "y_transform": p["y_transform"].to_dict()}
    return {"kind": mean.kind, "params": params}


def mean_from_dict(d: dict) -> MeanModel:
    kind, p = d["kind"], dict(d["params"])
    if kind == "kernel_ridge":
        p["x_train"] = np.asarray(p["x_train"], dtype=float)
        p["alpha"] = np.asarray(p["alpha"], dtype=float)
    elif kind == "network_mse":
        p["params"] = np.asarray(p["params"], dtype=float)
        p["sizes"] = tuple(p["sizes"])
        p["x_transform"] = Standardizer.from_dict(p["x_transform"])
        p["y_transform"] = Standardizer.from_dict(p["y_transform"])
    return MeanModel(kind, p)
