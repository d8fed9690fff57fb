"""Closed-form scoring rules for Gaussian forecasts.

Everything here is a pure function of numpy arrays. Scores are negatively
oriented (lower is better). Errors are ``epsilon = y_obs - mu`` and the
standardized errors are ``eta = epsilon / (sqrt(2) * sigma)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import erf, erfinv

from .errors import ContractError, DegenerateInputError, DomainError

SQRT_PI = math.sqrt(math.pi)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
LOG_2PI_HALF = 0.5 * math.log(2.0 * math.pi)
# Standardized error z = |eps|/sigma at the CRPS-optimal sigma.
CRPS_OPT_Z = math.sqrt(math.log(2.0))
# Per-sample CRPS minimum is CRPS_MIN_FACTOR * |epsilon|, reached at z = CRPS_OPT_Z.
CRPS_MIN_FACTOR = math.erf(0.5 * math.sqrt(math.log(4.0)))
# CRPS scale entering the AR weight: sqrt(log 4)/2 * mean|eps|. This is the
# erf argument above rather than the attained minimum; kept so the weight,
# and with it the cost function, is the published one.
BETA_CRPS_FACTOR = 0.5 * math.sqrt(math.log(4.0))
# Constant term of the closed-form reliability score.
RS_CONSTANT = 0.5 * SQRT_2_OVER_PI


class RsVariant(str, enum.Enum):
    """Which form of the reliability score to use.

    ``EXACT`` is the integral itself. ``PRACTICAL`` drops the trailing
    constant, so its minimum tends to ~0.3989 instead of 0 for large N.
    """

    EXACT = "exact"
    PRACTICAL = "practical"


@dataclass(frozen=True)
class ErrorSample:
    x: np.ndarray
    epsilon: float

    def __post_init__(self):
        if not math.isfinite(self.epsilon):
            raise DomainError("epsilon must be finite")


@dataclass(frozen=True)
class GaussianForecast:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise DomainError("mu and sigma must be finite")
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")

    def cdf(self, y):
        return 0.5 * (1.0 + erf((np.asarray(y) - self.mu) / (math.sqrt(2.0) * self.sigma)))


@dataclass(frozen=True)
class ScoreBreakdown:
    """Scores of one set of forecasts against observations."""

    crps_mean: float
    rs: float
    ar: float
    nlpd_mean: float
    beta: float
    crps_min: float
    rs_min: float
    n: int
    variant: RsVariant = RsVariant.PRACTICAL

    def as_dict(self) -> dict:
        return {
            "crps": self.crps_mean,
            "rs": self.rs,
            "ar": self.ar,
            "nlpd": self.nlpd_mean,
            "beta": self.beta,
            "crps_min": self.crps_min,
            "rs_min": self.rs_min,
            "n": self.n,
            "rs_variant": RsVariant(self.variant).value,
        }


def _positive(sigma, name="sigma"):
    sigma = np.asarray(sigma, dtype=float)
    if not np.all(sigma > 0):
        raise DomainError(f"{name} must be strictly positive")
    return sigma


def _scalar_or_array(value):
    return float(value) if np.ndim(value) == 0 else value


def nlpd(epsilon, sigma):
    """Negative log predictive density of N(0, sigma^2) at ``epsilon``."""
    sigma = _positive(sigma)
    epsilon = np.asarray(epsilon, dtype=float)
    var = sigma * sigma
    out = 0.5 * np.log(var) + epsilon * epsilon / (2.0 * var) + LOG_2PI_HALF
    return _scalar_or_array(out)


def crps_gaussian(mu, sigma, y_obs):
    """Closed-form CRPS of N(mu, sigma^2) for observation ``y_obs``.

    For sigma -> 0 the value tends to the absolute error |y_obs - mu|; that
    limit is available as ``crps_min``-style code paths rather than here.
    """
    sigma = _positive(sigma)
    eps = np.asarray(y_obs, dtype=float) - np.asarray(mu, dtype=float)
    z = eps / sigma
    out = sigma * (
        z * erf(z / math.sqrt(2.0))
        + SQRT_2_OVER_PI * np.exp(-0.5 * z * z)
        - 1.0 / SQRT_PI
    )
    return _scalar_or_array(out)


def crps_gaussian_dsigma(epsilon, sigma):
    """Derivative of the Gaussian CRPS with respect to sigma at fixed error."""
    sigma = _positive(sigma)
    epsilon = np.asarray(epsilon, dtype=float)
    out = SQRT_2_OVER_PI * np.exp(-epsilon * epsilon / (2.0 * sigma * sigma)) - 1.0 / SQRT_PI
    return _scalar_or_array(out)


def crps_numeric(
    cdf: Callable[[float], float],
    y_obs: float,
    lower: float | None = None,
    upper: float | None = None,
    points: Sequence[float] | None = None,
    tol: float = 1e-11,
    check_points: int = 513,
) -> float:
    """CRPS of an arbitrary forecast cdf by adaptive quadrature.

    The integral of ``(cdf(y) - H(y - y_obs))^2`` is split at ``y_obs`` (where
    the Heaviside jump sits) and at any known kinks/jumps in ``points``.
    ``lower``/``upper`` must reach far enough into the tails that the
    integrand is negligible beyond them.

    Raises:
        ContractError: if cdf samples on the integration range are not
            nondecreasing within [0, 1].
    """
    y_obs = float(y_obs)
    if lower is None:
        lower = y_obs - 1.0
    if upper is None:
        upper = y_obs + 1.0
    lower = min(lower, y_obs)
    upper = max(upper, y_obs)

    probe = np.linspace(lower, upper, check_points)
    vals = np.array([cdf(y) for y in probe], dtype=float)
    if np.any(~np.isfinite(vals)) or np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        raise ContractError("cdf values must lie in [0, 1]")
    if np.any(np.diff(vals) < -1e-12):
        raise ContractError("cdf must be nondecreasing")

    breaks = sorted(float(p) for p in (() if points is None else points) if lower < p < upper)

    def piece(a, b, f):
        inner = [p for p in breaks if a < p < b]
        val, _ = integrate.quad(
            f, a, b, points=inner or None, epsabs=tol, epsrel=tol, limit=500
        )
        return val

    left = piece(lower, y_obs, lambda y: cdf(y) ** 2) if lower < y_obs else 0.0
    right = piece(y_obs, upper, lambda y: (1.0 - cdf(y)) ** 2) if upper > y_obs else 0.0
    return left + right


def standardized_errors(epsilon, sigma):
    sigma = _positive(sigma)
    return np.asarray(epsilon, dtype=float) / (math.sqrt(2.0) * sigma)


def _check_sorted(etas):
    etas = np.asarray(etas, dtype=float)
    if etas.ndim != 1 or etas.size == 0:
        raise ContractError("etas must be a nonempty 1-D array")
    if np.any(np.diff(etas) < 0):
        raise ContractError("etas must be sorted ascending")
    return etas


def reliability_score(etas, variant: RsVariant = RsVariant.PRACTICAL) -> float:
    """Closed-form reliability score of sorted standardized errors.

    The exact variant equals the integrated squared distance between the
    empirical cdf of ``etas`` and 0.5 * (1 + erf(eta)).
    """
    etas = _check_sorted(etas)
    n = etas.size
    ranks = np.arange(1, n + 1)
    terms = (
        etas / n * (erf(etas) + 1.0)
        - etas / n**2 * (2 * ranks - 1)
        + np.exp(-etas * etas) / (SQRT_PI * n)
    )
    rs = float(np.sum(terms))
    if RsVariant(variant) is RsVariant.EXACT:
        rs -= RS_CONSTANT
    return rs


def reliability_score_grad(etas, sigmas):
    """Per-sample derivative of the reliability score w.r.t. sigma.

    ``sigmas[i]`` must belong to the sample whose standardized error is
    ``etas[i]``. Ranks are held at the given order. The result is the same
    for both variants.
    """
    etas = _check_sorted(etas)
    sigmas = _positive(sigmas, "sigmas")
    n = etas.size
    ranks = np.arange(1, n + 1)
    return etas / (n * sigmas) * ((2 * ranks - 1) / n - erf(etas) - 1.0)


def optimal_etas(n: int) -> np.ndarray:
    """Sorted standardized errors that minimize the reliability score."""
    if n < 1:
        raise DomainError("n must be >= 1")
    ranks = np.arange(1, n + 1)
    return erfinv((2 * ranks - 1) / n - 1.0)


def rs_min(n: int, variant: RsVariant = RsVariant.PRACTICAL) -> float:
    """Smallest attainable reliability score for a sample of size ``n``."""
    n = int(n)
    eta = optimal_etas(n)
    value = float(np.sum(np.exp(-eta * eta))) / (SQRT_PI * n)
    if RsVariant(variant) is RsVariant.EXACT:
        value -= RS_CONSTANT
    return value


def crps_min(epsilons) -> float:
    """Mean of the per-sample CRPS minima, CRPS_MIN_FACTOR * mean|eps|."""
    eps = np.asarray(epsilons, dtype=float)
    if eps.size == 0:
        raise DomainError("crps_min needs at least one error")
    return float(CRPS_MIN_FACTOR * np.mean(np.abs(eps)))


def ar_weight(
    epsilons, variant: RsVariant = RsVariant.PRACTICAL, fallback: float | None = None
) -> float:
    """Weight of the CRPS term, RS_min / (C + RS_min) with C = BETA_CRPS_FACTOR * mean|eps|.

    When every error is zero C vanishes and the weight collapses to 1; that
    case raises unless a ``fallback`` weight is given.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.size == 0:
        raise DomainError("ar_weight needs at least one error")
    cmin = BETA_CRPS_FACTOR * float(np.mean(np.abs(eps)))
    rmin = rs_min(eps.size, variant)
    if cmin <= 0.0 or rmin <= 0.0:
        if fallback is not None:
            return float(fallback)
        raise DegenerateInputError(
            "AR weight undefined: all errors are zero so CRPS_min = 0. "
            "Use the practical RS variant together with an explicit fallback "
            "weight (e.g. 0.5), or drop the degenerate sample."
        )
    return rmin / (cmin + rmin)


def ar_value_grad(eps, sigma, beta, variant=RsVariant.PRACTICAL):
    """AR cost and its gradient w.r.t. sigma for a precomputed ``beta``.

    Hot path for the optimizers: no validation beyond sigma > 0, which the
    caller is expected to have enforced (non-positive sigma returns inf).
    """
    if not np.all(sigma > 0):
        return math.inf, np.full_like(sigma, np.nan), math.nan, math.nan
    n = eps.size
    z = eps / sigma
    crps = sigma * (z * erf(z / math.sqrt(2.0)) + SQRT_2_OVER_PI * np.exp(-0.5 * z * z) - 1.0 / SQRT_PI)
    dcrps = SQRT_2_OVER_PI * np.exp(-0.5 * z * z) - 1.0 / SQRT_PI

    eta = z / math.sqrt(2.0)
    order = np.argsort(eta, kind="stable")
    es = eta[order]
    erf_es = erf(es)
    ranks = np.arange(1, n + 1)
    rs = float(np.sum(es / n * (erf_es + 1.0) - es / n**2 * (2 * ranks - 1) + np.exp(-es * es) / (SQRT_PI * n)))
    if RsVariant(variant) is RsVariant.EXACT:
        rs -= RS_CONSTANT
    drs = np.empty(n)
    drs[order] = es / (n * sigma[order]) * ((2 * ranks - 1) / n - erf_es - 1.0)

    crps_mean = float(np.mean(crps))
    ar = beta * crps_mean + (1.0 - beta) * rs
    grad = beta * dcrps / n + (1.0 - beta) * drs
    return ar, grad, crps_mean, rs


def ar_cost(
    epsilons,
    sigmas,
    variant: RsVariant = RsVariant.PRACTICAL,
    beta: float | None = None,
    fallback_beta: float | None = None,
):
    """Accuracy-Reliability cost of ``sigmas`` for the given errors.

    Returns ``(ar, grad, breakdown)`` where ``grad`` is d AR / d sigma in the
    original sample order, with ranks frozen at the current sort.
    """
    eps = np.asarray(epsilons, dtype=float)
    sig = _positive(sigmas, "sigmas")
    if eps.shape != sig.shape or eps.ndim != 1:
        raise ContractError("epsilons and sigmas must be 1-D arrays of equal length")
    variant = RsVariant(variant)
    if beta is None:
        beta = ar_weight(eps, variant, fallback=fallback_beta)
    ar, grad, crps_mean, rs = ar_value_grad(eps, sig, beta, variant)
    breakdown = ScoreBreakdown(
        crps_mean=crps_mean,
        rs=rs,
        ar=ar,
        nlpd_mean=float(np.mean(nlpd(eps, sig))),
        beta=beta,
        crps_min=crps_min(eps),
        rs_min=rs_min(eps.size, variant),
        n=eps.size,
        variant=variant,
    )
    return ar, grad, breakdown


def score_forecasts(
    mu, sigma, y_obs, variant: RsVariant = RsVariant.PRACTICAL, fallback_beta: float | None = 0.5
) -> ScoreBreakdown:
    """Score Gaussian forecasts against observations (no gradient)."""
    eps = np.asarray(y_obs, dtype=float) - np.asarray(mu, dtype=float)
    return ar_cost(eps, np.asarray(sigma, dtype=float), variant, fallback_beta=fallback_beta)[2]
