"""Binless reliability diagrams and the calibration-error metric."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .errors import ContractError, DomainError


@dataclass(frozen=True)
class StandardizedErrors:
    """Sorted standardized errors plus the sort permutation.

    ``perm[k]`` is the original index of the sample at sorted position k.
    """

    etas: np.ndarray
    perm: np.ndarray

    def __len__(self):
        return self.etas.size


@dataclass(frozen=True)
class ReliabilityDiagram:
    predicted: np.ndarray
    observed: np.ndarray

    def __len__(self):
        return self.predicted.size

    def to_rows(self):
        return list(zip(self.predicted.tolist(), self.observed.tolist()))


def standardize(epsilons, sigmas) -> StandardizedErrors:
    eps = np.asarray(epsilons, dtype=float).ravel()
    sig = np.asarray(sigmas, dtype=float).ravel()
    if eps.shape != sig.shape:
        raise ContractError("epsilons and sigmas must have equal length")
    if not np.all(sig > 0):
        raise DomainError("sigmas must be strictly positive")
    eta = eps / (math.sqrt(2.0) * sig)
    perm = np.argsort(eta, kind="stable")
    return StandardizedErrors(etas=eta[perm], perm=perm)


def phi(eta):
    """Probability P(y <= y_obs) under the forecast, from the standardized error."""
    out = 0.5 * (erf(np.asarray(eta, dtype=float)) + 1.0)
    return float(out) if np.ndim(out) == 0 else out


def pit_values(epsilons, sigmas):
    eps = np.asarray(epsilons, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    if not np.all(sig > 0):
        raise DomainError("sigmas must be strictly positive")
    return phi(eps / (math.sqrt(2.0) * sig))


def reliability_diagram(phis) -> ReliabilityDiagram:
    """Empirical cdf of the predicted probabilities, one point per sample.

    The i-th smallest probability (1-based) is paired with observed frequency
    i/N, i.e. the right-continuous empirical cdf evaluated at that point.
    """
    p = np.asarray(phis, dtype=float).ravel()
    if p.size == 0:
        raise DomainError("reliability diagram needs at least one probability")
    if np.any(p < 0) or np.any(p > 1) or np.any(~np.isfinite(p)):
        raise DomainError("probabilities must lie in [0, 1]")
    p = np.sort(p, kind="stable")
    n = p.size
    return ReliabilityDiagram(predicted=p, observed=np.arange(1, n + 1) / n)


def calibration_error(diagram: ReliabilityDiagram) -> float:
    """Largest distance of the diagram from the diagonal, in percent.

    Both sides of every empirical-cdf step are checked, which makes this the
    two-sided Kolmogorov-Smirnov statistic of the probabilities against U(0,1).
    """
    p = diagram.predicted
    n = p.size
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    dev = max(np.max(np.abs(upper - p)), np.max(np.abs(lower - p)))
    return 100.0 * float(dev)


def calibration_error_of(epsilons, sigmas) -> float:
    return calibration_error(reliability_diagram(pit_values(epsilons, sigmas)))


def _other_root(c: float, u0: float) -> float:
    # g(u) = u + exp(-u) has its minimum at u = 0; find the root of g = c
    # on the opposite side of the minimum from u0.
    def g(u):
        return u + math.exp(-u) - c

    if u0 < 0:
        hi = 1.0
        while g(hi) <= 0:
            hi *= 2.0
        return brentq(g, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    lo = -1.0
    while g(lo) <= 0:
        lo *= 2.0
    return brentq(g, lo, 0.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def equal_nlpd_sigma(epsilons, sigmas):
    """Alternative sigmas that give the same per-sample NLPD as ``sigmas``.

    For each sample the NLPD as a function of sigma is minimized at |eps|;
    the returned value sits on the other side of that minimum on the same
    NLPD level. Samples with eps == 0 or sigma == |eps| are returned as is.
    """
    eps = np.atleast_1d(np.asarray(epsilons, dtype=float))
    sig = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if not np.all(sig > 0):
        raise DomainError("sigmas must be strictly positive")
    out = sig.copy()
    for k, (e, s) in enumerate(zip(eps, sig)):
        if e == 0.0:
            continue
        # u = log(sigma^2 / eps^2); NLPD = (u + exp(-u))/2 + const.
        u0 = 2.0 * (math.log(s) - math.log(abs(e)))
        if u0 == 0.0:
            continue
        c = u0 + math.exp(-u0)
        u1 = _other_root(c, u0)
        out[k] = abs(e) * math.exp(0.5 * u1)
    return out
