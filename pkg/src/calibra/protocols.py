"""End-to-end experiment runs for the toy and tabular benchmarks.

One call of ``run_toy`` / ``run_tabular`` is one seeded repetition; the CLI
and the scripts aggregate repetitions into medians.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, estimators, meanfn
from .datasets import Dataset, SplitSpec, TOY_DOMAINS, gen_toy, split_indices, standardize, toy_sigma
from .errors import DomainError
from .optim import OptimOptions
from .reliability import calibration_error_of, pit_values
from .scores import RsVariant, score_forecasts

log = logging.getLogger(__name__)

TOY_SPLIT = (0.33, 0.33, 0.34)
TABULAR_SPLIT = (0.70, 0.15, 0.15)
TABULAR_METHODS = ("crps", "kmeans", "recal", "ar")
GRID_POINTS = 200


@dataclass
class MethodResult:
    name: str
    crps: float
    rs: float
    ar: float
    nlpd: float
    beta: float
    cal_err_pct: float
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_breakdown(cls, name, bd, cal, **extra):
        return cls(name, bd.crps_mean, bd.rs, bd.ar, bd.nlpd_mean, bd.beta, cal, dict(extra))

    def as_dict(self):
        d = {"name": self.name, "crps": self.crps, "rs": self.rs, "ar": self.ar,
             "nlpd": self.nlpd, "beta": self.beta, "cal_err_pct": self.cal_err_pct}
        d.update(self.extra)
        return d


def _score(name, eps, sigma, variant, **extra):
    bd = score_forecasts(np.zeros_like(eps), sigma, eps, variant)
    return MethodResult.from_breakdown(name, bd, calibration_error_of(eps, sigma), **extra)


def toy_grid(name: str, n: int = GRID_POINTS):
    lo, hi, d = TOY_DOMAINS[name]
    if d != 1:
        raise DomainError("sigma grids are defined for 1-D toys only")
    return np.linspace(lo, hi, n)


def fit_mean(kind: str, data: Dataset, train_idx, val_idx, seed: int, toy_name: str | None = None,
             opts: OptimOptions | None = None):
    if kind == "exact":
        if toy_name is None:
            raise DomainError("exact mean is only available for toy data")
        return meanfn.exact_toy(toy_name)
    if kind == "kernel-ridge":
        idx = np.concatenate([train_idx, val_idx])
        return meanfn.fit_kernel_ridge(data.x[idx], data.y[idx], seed=seed)
    if kind == "network":
        opts = opts or OptimOptions(max_iters=2000, seed=seed)
        return meanfn.fit_network_mse(data.x, data.y, (train_idx, val_idx), opts)
    if kind.startswith("column:"):
        return meanfn.column(kind.split(":", 1)[1])
    raise DomainError(f"unknown mean {kind!r}")


def fit_variance(estimator, loss, x, eps, train_idx, val_idx, variant, seed, tol=1e-4, restarts=5):
    """Fit one variance model; returns ``(model_or_sigmas, report)``."""
    if estimator == "poly":
        idx = np.concatenate([train_idx, val_idx])
        return estimators.fit_polynomial(x[idx], eps[idx], tol=tol, variant=variant, loss=loss)
    if estimator == "network":
        opts = OptimOptions(max_iters=2000, seed=seed, restarts=restarts)
        return estimators.fit_network(x, eps, (train_idx, val_idx), opts, variant=variant, loss=loss)
    if estimator == "pointwise":
        sig = estimators.fit_pointwise(eps[train_idx], variant=variant, loss=loss)
        return sig, None
    raise DomainError(f"unknown estimator {estimator!r}")


def run_toy(name: str, seed: int, estimator: str = "poly", mean: str = "exact", n: int = 100,
            variant=RsVariant.PRACTICAL, loss: str = "ar", tol: float = 1e-4, restarts: int = 5):
    """One repetition of the toy protocol.

    ``n`` fresh points are split 33/33/34. The network trains on the first
    partition and early-stops on the second. The polynomial has no use for a
    validation set and is fitted on all ``n`` points; its test scores then
    come from an independent fresh sample of size ``n``. Returns a dict with
    the grid RMSE of sigma (1-D toys), Pearson correlation on the test
    points, test scores and the sigma curve on the grid.
    """
    t0 = time.perf_counter()
    data = gen_toy(name, n, seed)
    tr, va, te = split_indices(n, SplitSpec(TOY_SPLIT, seed))
    mean_model = fit_mean(mean, data, tr, va, seed, toy_name=name)
    eps = meanfn.residuals(data, mean_model)

    if estimator == "poly":
        fit_idx = np.arange(n)
        model, _ = estimators.fit_polynomial(data.x[fit_idx], eps[fit_idx], tol=tol, variant=variant, loss=loss)
        test = gen_toy(name, n, seed + 1_000_003)
        x_te = test.x
        eps_te = meanfn.residuals(test, mean_model)
        true_te = test.true_sigma
    else:
        model, _ = fit_variance(estimator, loss, data.x, eps, tr, va, variant, seed, tol, restarts)
        x_te, eps_te, true_te = data.x[te], eps[te], data.true_sigma[te]

    out = {"dataset": name, "seed": seed, "estimator": estimator, "mean": mean, "loss": loss}
    if TOY_DOMAINS[name][2] == 1:
        grid = toy_grid(name)
        sig_grid = np.asarray(model.raw(grid)) if estimator == "poly" else estimators.predict_sigma(model, grid[:, None])
        out["grid_x"] = grid
        out["grid_sigma"] = sig_grid
        out["grid_rmse"] = float(np.sqrt(np.mean((sig_grid - toy_sigma(name, grid)) ** 2)))
    try:
        sig_te = estimators.predict_sigma(model, x_te)
    except DomainError:
        sig_te = np.maximum(np.asarray(model.raw(x_te)), 1e-12)
    out["test"] = _score(loss, eps_te, sig_te, variant)
    out["pearson_test"] = float(np.corrcoef(sig_te, true_te)[0, 1]) if np.std(sig_te) > 0 else math.nan
    out["model"] = model
    out["elapsed_s"] = time.perf_counter() - t0
    return out


def run_tabular(data: Dataset, seed: int, methods=TABULAR_METHODS, variant=RsVariant.PRACTICAL,
                mean: str = "network", standardize_target: bool = True, restarts: int = 5,
                kmeans_ks=range(1, 11), kmeans_select: str = "val"):
    """One repetition of the tabular protocol.

    A fresh seeded 70/15/15 split; inputs (and by default targets) are
    standardized with training statistics; a mean network is trained on the
    training partition; each variance method uses only training residuals,
    with the validation partition for early stopping (networks) or fitting
    the recalibration map. Scores are on the test partition.

    K-means sweeps ``kmeans_ks`` and reports the CRPS of the best-CRPS k and
    the calibration error of the best-calibrated k, both picked on the
    validation partition. ``kmeans_select="test"`` picks them on the test
    partition instead, which leaks test information into the baseline.
    """
    t0 = time.perf_counter()
    unknown = set(methods) - set(TABULAR_METHODS)
    if unknown:
        raise DomainError(f"unknown methods {sorted(unknown)}")
    tr, va, te = split_indices(data.n, SplitSpec(TABULAR_SPLIT, seed))
    trd, (vad, ted), _ = standardize(data.subset(tr), data.subset(va), data.subset(te), target=standardize_target)
    x = np.concatenate([trd.x, vad.x, ted.x])
    y = np.concatenate([trd.y, vad.y, ted.y])
    full = Dataset(x=x, y=y, extra={k: np.concatenate([trd.extra[k], vad.extra[k], ted.extra[k]]) for k in trd.extra})
    i_tr = np.arange(tr.size)
    i_va = np.arange(tr.size, tr.size + va.size)
    i_te = np.arange(tr.size + va.size, data.n)

    mean_model = fit_mean(mean, full, i_tr, i_va, seed, opts=OptimOptions(max_iters=2000, seed=seed, restarts=restarts))
    eps = meanfn.residuals(full, mean_model)
    results = {}
    opts = OptimOptions(max_iters=2000, seed=seed, restarts=restarts)

    need_ar = "ar" in methods or "recal" in methods
    if need_ar:
        ar_model, _ = estimators.fit_network(x, eps, (i_tr, i_va), opts, variant=variant, loss="ar")
        if "ar" in methods:
            results["ar"] = _score("ar", eps[i_te], estimators.predict_sigma(ar_model, x[i_te]), variant)
    if "crps" in methods:
        crps_model, _ = estimators.fit_network(x, eps, (i_tr, i_va), opts, variant=variant, loss="crps")
        results["crps"] = _score("crps", eps[i_te], estimators.predict_sigma(crps_model, x[i_te]), variant)
    if "recal" in methods:
        rmap = baselines.fit_recalibration(pit_values(eps[i_va], estimators.predict_sigma(ar_model, x[i_va])))
        sig_te = estimators.predict_sigma(ar_model, x[i_te])
        bd, cal = baselines.score_recalibrated(rmap, np.zeros(i_te.size), sig_te, eps[i_te], variant)
        results["recal"] = MethodResult.from_breakdown("recal", bd, cal)
    if "kmeans" in methods:
        per_k = []
        for k in kmeans_ks:
            km = baselines.fit_kmeans_sigma(x[i_tr], eps[i_tr], k, seed=seed)
            r_te = _score("kmeans", eps[i_te], km.predict_sigma(x[i_te]), variant, k=k)
            r_va = _score("kmeans", eps[i_va], km.predict_sigma(x[i_va]), variant, k=k)
            per_k.append((k, r_te, r_va))
        if kmeans_select == "val":
            k_cal = min(per_k, key=lambda t: t[2].cal_err_pct)
            k_crps = min(per_k, key=lambda t: t[2].crps)
        else:
            k_cal = min(per_k, key=lambda t: t[1].cal_err_pct)
            k_crps = min(per_k, key=lambda t: t[1].crps)
        res = k_cal[1]
        res.crps = k_crps[1].crps
        res.extra.update({"k_best_cal": k_cal[0], "k_best_crps": k_crps[0], "select": kmeans_select})
        results["kmeans"] = res

    return {
        "seed": seed,
        "sizes": (tr.size, va.size, te.size),
        "methods": results,
        "mean_val_mse": mean_model.params.get("val_mse"),
        "elapsed_s": time.perf_counter() - t0,
    }
