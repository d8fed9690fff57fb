"""Variance models sigma(x) fitted by minimizing the Accuracy-Reliability cost.

Three estimators share one loss interface:

* ``fit_polynomial`` grows a 1-D polynomial order by order, warm-starting
  each order from the previous solution.
* ``fit_network`` trains a [d, 50, 10, 1] network whose output is log sigma.
* ``fit_pointwise`` gives every sample its own free sigma (diagnostic).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from . import nn
from .datasets import Standardizer
from .errors import ContractError, DomainError, FitError, NonPositiveSigmaError
from .optim import OptimOptions, OptimResult, minimize, multi_start
from .scores import (
    SQRT_2_OVER_PI,
    SQRT_PI,
    RsVariant,
    ScoreBreakdown,
    ar_cost,
    ar_value_grad,
    ar_weight,
)

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
P_MAX = 10
LOSSES = ("ar", "crps", "nlpd")


def sigma_loss(kind: str, eps, variant=RsVariant.PRACTICAL, beta: float | None = None):
    """Return ``f(sigma) -> (loss, dloss/dsigma)`` for the given errors.

    ``crps`` is the AR cost with weight 1 (no reliability term); ``nlpd`` is
    the mean negative log density. Non-positive sigma gives ``inf``.
    """
    eps = np.asarray(eps, dtype=float)
    n = eps.size
    if kind == "ar":
        if beta is None:
            beta = ar_weight(eps, variant)

        def f(sigma):
            ar, g, _, _ = ar_value_grad(eps, sigma, beta, variant)
            return ar, g

    elif kind == "crps":

        def f(sigma):
            if not np.all(sigma > 0):
                return math.inf, np.full_like(sigma, np.nan)
            z = eps / sigma
            ez = np.exp(-0.5 * z * z)
            val = sigma * (z * erf(z / math.sqrt(2.0)) + SQRT_2_OVER_PI * ez - 1.0 / SQRT_PI)
            return float(np.mean(val)), (SQRT_2_OVER_PI * ez - 1.0 / SQRT_PI) / n

    elif kind == "nlpd":

        def f(sigma):
            if not np.all(sigma > 0):
                return math.inf, np.full_like(sigma, np.nan)
            r = eps * eps / (sigma * sigma)
            val = np.log(sigma) + 0.5 * r + 0.5 * math.log(2 * math.pi)
            return float(np.mean(val)), (1.0 - r) / (sigma * n)

    else:
        raise DomainError(f"unknown loss {kind!r}; expected one of {LOSSES}")
    return f


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class PolynomialVarianceModel:
    """sigma(x) = sum_l theta_l * u^l with u = (x - shift) / scale."""

    theta: np.ndarray
    shift: float = 0.0
    scale: float = 1.0
    kind: str = field(default="polynomial", init=False)

    @property
    def order(self) -> int:
        return self.theta.size - 1

    @property
    def input_dim(self) -> int:
        return 1

    def raw(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            if x.shape[1] != 1:
                raise ContractError("polynomial variance model takes 1-D inputs")
            x = x[:, 0]
        u = (x - self.shift) / self.scale
        return np.polynomial.polynomial.polyval(u, self.theta)


@dataclass(frozen=True)
class NetworkVarianceModel:
    """log sigma(x) = net(standardized x) + log_scale."""

    params: np.ndarray
    sizes: tuple
    x_transform: Standardizer
    log_scale: float = 0.0
    kind: str = field(default="network", init=False)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    def log_sigma(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.input_dim == 1 else x[None, :]
        if x.shape[1] != self.input_dim:
            raise ContractError(f"model expects {self.input_dim} inputs, got {x.shape[1]}")
        return nn.forward(self.params, self.sizes, self.x_transform.transform(x)) + self.log_scale


def predict_sigma(model, x) -> np.ndarray:
    """Predicted standard deviation at ``x`` (rows are points)."""
    if isinstance(model, PolynomialVarianceModel):
        s = np.atleast_1d(model.raw(x))
        if not np.all(s > 0):
            bad = np.asarray(x, dtype=float).reshape(-1)[~(s > 0)]
            raise NonPositiveSigmaError(f"polynomial sigma is non-positive at x={bad[:5].tolist()}", bad)
        return s
    if isinstance(model, NetworkVarianceModel):
        return np.exp(model.log_sigma(x))
    if hasattr(model, "predict_sigma"):
        return model.predict_sigma(x)
    raise TypeError(f"unsupported variance model {type(model).__name__}")


def model_to_dict(model) -> dict:
    if isinstance(model, PolynomialVarianceModel):
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": "polynomial",
            "input_dim": 1,
            "standardization": {"shift": model.shift, "scale": model.scale},
            "parameters": {"theta": model.theta.tolist()},
        }
    if isinstance(model, NetworkVarianceModel):
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": "network",
            "input_dim": model.input_dim,
            "standardization": {"x": model.x_transform.to_dict(), "log_scale": model.log_scale},
            "parameters": {"sizes": list(model.sizes), "flat": model.params.tolist()},
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise ContractError(f"unsupported model format version {d.get('version')!r}")
    kind = d.get("kind")
    std = d["standardization"]
    p = d["parameters"]
    if kind == "polynomial":
        return PolynomialVarianceModel(np.asarray(p["theta"], dtype=float), std["shift"], std["scale"])
    if kind == "network":
        return NetworkVarianceModel(
            params=np.asarray(p["flat"], dtype=float),
            sizes=tuple(p["sizes"]),
            x_transform=Standardizer.from_dict(std["x"]),
            log_scale=float(std["log_scale"]),
        )
    raise ContractError(f"unknown model kind {kind!r}")


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# ---------------------------------------------------------------- reports


@dataclass
class FitReport:
    model: object
    train: ScoreBreakdown | None = None
    val: ScoreBreakdown | None = None
    test: ScoreBreakdown | None = None
    order_trace: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    loss: str = "ar"
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "loss": self.loss,
            "train": self.train and self.train.as_dict(),
            "val": self.val and self.val.as_dict(),
            "test": self.test and self.test.as_dict(),
            "order_trace": self.order_trace,
            "restarts": self.restarts,
            "notes": self.notes,
        }


def _breakdown(eps, sigma, variant):
    if eps is None or len(eps) == 0:
        return None
    return ar_cost(eps, sigma, variant, fallback_beta=0.5)[2]


# ------------------------------------------------------------ polynomial


def _poly_positive_on_domain(theta, u_train, n_grid=512):
    lo, hi = float(np.min(u_train)), float(np.max(u_train))
    grid = np.linspace(lo, hi, n_grid)
    pts = np.concatenate([grid, u_train])
    return bool(np.all(np.polynomial.polynomial.polyval(pts, theta) > 0))


def fit_polynomial(
    x,
    eps,
    tol: float = 1e-4,
    variant: RsVariant = RsVariant.PRACTICAL,
    opts: OptimOptions | None = None,
    max_order: int = P_MAX,
    loss: str = "ar",
    theta0: float | None = None,
    keep_previous: bool = False,
):
    """Order-by-order polynomial fit of sigma(x).

    Starts from the constant model theta_0 = std(eps), optimized. Each new
    order is warm-started from the previous coefficients with a zero
    appended. Growth stops when the cost improves by at most ``tol``, when
    the warm start is already stationary for the larger model, or at
    ``max_order``. An order whose sigma is not positive over the training
    range is rejected and the previous order kept.

    Returns ``(model, report)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ContractError("fit_polynomial supports 1-D inputs only")
        x = x[:, 0]
    eps = np.asarray(eps, dtype=float)
    if x.size != eps.size:
        raise ContractError("x and eps must have equal length")
    if x.size < 3:
        raise DomainError("fit_polynomial needs at least 3 samples")
    opts = opts or OptimOptions(max_iters=500)

    shift = float(np.min(x))
    scale = float(np.max(x) - np.min(x)) or 1.0
    u = (x - shift) / scale
    lossf = sigma_loss(loss, eps, variant)

    def objective_for(order):
        V = np.vander(u, order + 1, increasing=True)

        def obj(theta):
            val, g = lossf(V @ theta)
            if not math.isfinite(val):
                return math.inf, np.full(theta.size, np.nan)
            return val, V.T @ g

        return obj

    start = float(np.std(eps)) if theta0 is None else float(theta0)
    if not start > 0:
        start = float(np.mean(np.abs(eps))) or 1.0
    res = minimize(objective_for(0), np.array([start]), opts)
    theta = res.x
    cost = res.fun
    trace = [{"order": 0, "cost": cost, "iterations": res.iterations, "message": res.message}]
    notes = []

    order = 0
    err = math.inf
    while order < max_order and err > tol:
        order += 1
        obj = objective_for(order)
        warm = np.append(theta, 0.0)
        _, g_warm = obj(warm)
        if np.max(np.abs(g_warm)) <= opts.grad_tol:
            notes.append(f"order {order}: warm start already stationary; stopping")
            break
        res = minimize(obj, warm, opts)
        if not _poly_positive_on_domain(res.x, u):
            msg = f"order {order} rejected: sigma(x) <= 0 inside the training range"
            log.warning(msg)
            notes.append(msg)
            break
        err = abs(cost - res.fun)
        if keep_previous and err <= tol:
            notes.append(f"order {order}: improvement {err:.3g} <= tol; keeping order {order - 1}")
            break
        theta, cost = res.x, res.fun
        trace.append({"order": order, "cost": cost, "iterations": res.iterations, "message": res.message})

    model = PolynomialVarianceModel(theta=np.array(theta), shift=shift, scale=scale)
    report = FitReport(model=model, order_trace=trace, loss=loss, notes=notes)
    report.train = _breakdown(eps, np.polynomial.polynomial.polyval(u, theta), variant)
    return model, report


# --------------------------------------------------------------- network


def _network_objective(sizes, X, eps, lossf, log_scale):
    def obj(theta):
        out, state = nn.forward(theta, sizes, X, keep=True)
        z = out + log_scale
        if np.max(z) > 700:
            return math.inf, np.full(theta.size, np.nan)
        sigma = np.exp(z)
        val, g = lossf(sigma)
        if not math.isfinite(val):
            return math.inf, np.full(theta.size, np.nan)
        return val, nn.backward(theta, sizes, state, g * sigma)

    return obj


def fit_network(
    x,
    eps,
    splits,
    opts: OptimOptions | None = None,
    variant: RsVariant = RsVariant.PRACTICAL,
    loss: str = "ar",
    hidden=nn.DEFAULT_HIDDEN,
    zero_last: bool = False,
):
    """Train a log-sigma network on the training partition.

    ``splits`` is ``(train_idx, val_idx)``; the validation partition drives
    early stopping and the choice among restarts. No other samples are read.

    Returns ``(model, report)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    eps = np.asarray(eps, dtype=float)
    train_idx, val_idx = (np.asarray(s, dtype=int) for s in splits)
    if np.intersect1d(train_idx, val_idx).size:
        raise ContractError("train and validation partitions overlap")
    if train_idx.size < 20:
        raise DomainError("fit_network needs at least 20 training samples")
    opts = opts or OptimOptions(max_iters=2000)

    xt = Standardizer.fit(x[train_idx])
    X_tr, X_va = xt.transform(x[train_idx]), xt.transform(x[val_idx])
    e_tr, e_va = eps[train_idx], eps[val_idx]
    spread = float(np.std(e_tr)) or float(np.mean(np.abs(e_tr))) or 1.0
    log_scale = math.log(spread)
    sizes = nn.layer_sizes(x.shape[1], hidden)

    obj = _network_objective(sizes, X_tr, e_tr, sigma_loss(loss, e_tr, variant), log_scale)
    val_loss = sigma_loss(loss, e_va, variant) if val_idx.size else None

    def validation(theta):
        z = nn.forward(theta, sizes, X_va) + log_scale
        if np.max(z) > 700:
            return math.inf
        return val_loss(np.exp(z))[0]

    def sampler(rng):
        return nn.init_params(sizes, rng, zero_last=zero_last)

    try:
        best = multi_start(obj, sampler, opts, validation if val_loss else None)
    except FitError as exc:
        raise FitError("network training failed on every restart", exc.diagnostics) from exc

    traces = best.restart_log
    model = NetworkVarianceModel(params=best.x.copy(), sizes=tuple(sizes), x_transform=xt, log_scale=log_scale)
    report = FitReport(model=model, restarts=traces, loss=loss)
    report.train = _breakdown(e_tr, predict_sigma(model, x[train_idx]), variant)
    if val_idx.size:
        report.val = _breakdown(e_va, predict_sigma(model, x[val_idx]), variant)
    return model, report


# ------------------------------------------------------------- pointwise


def fit_pointwise(
    eps,
    variant: RsVariant = RsVariant.PRACTICAL,
    opts: OptimOptions | None = None,
    loss: str = "ar",
    return_result: bool = False,
):
    """Free per-sample sigmas minimizing the chosen loss.

    With ``loss="crps"`` the samples decouple and the solution is
    |eps| / sqrt(log 2) exactly; it is returned in closed form. With
    ``return_result`` the optimizer result is returned too, its ``x`` and
    ``grad`` converted back to sigma space.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.size < 2:
        raise DomainError("fit_pointwise needs at least 2 samples")
    abs_eps = np.abs(eps)
    if loss == "crps":
        if np.any(abs_eps == 0):
            raise DegenerateSampleError("CRPS-only pointwise sigma is zero for a zero error")
        return abs_eps / math.sqrt(math.log(2.0))
    if loss == "nlpd":
        if np.any(abs_eps == 0):
            raise DegenerateSampleError("NLPD pointwise sigma is zero for a zero error")
        return abs_eps.copy()
    # Work on errors in units of mean|eps| and in log sigma: sigma stays
    # positive and a common rescaling of the errors leaves the optimizer
    # path unchanged up to rounding.
    unit = float(np.mean(abs_eps)) or 1.0
    e = eps / unit
    lossf = sigma_loss(loss, e, variant)

    def obj(log_sigma):
        sigma = np.exp(log_sigma)
        val, g = lossf(sigma)
        return val, g * sigma

    a = np.abs(e)
    start = np.log(np.where(a > 0, a / math.sqrt(math.log(2.0)), 1.0))
    opts = opts or OptimOptions(max_iters=5000, grad_tol=1e-10)
    res = minimize(obj, start, opts)
    sigma = np.exp(res.x) * unit
    if return_result:
        res.x = sigma
        res.grad = sigma_loss(loss, eps, variant)(sigma)[1]
        res.fun = sigma_loss(loss, eps, variant)(sigma)[0]
        return sigma, res
    return sigma


class DegenerateSampleError(DomainError):
    pass
