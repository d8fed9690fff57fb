"""Comparison methods: CRPS-only fitting, K-means sigma, isotonic recalibration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfinv
from sklearn.cluster import KMeans
from sklearn.isotonic import IsotonicRegression

from . import estimators
from .datasets import Standardizer
from .errors import DomainError
from .reliability import calibration_error, reliability_diagram
from .scores import RsVariant, ScoreBreakdown, ar_weight, crps_min, reliability_score, rs_min

log = logging.getLogger(__name__)


def fit_crps_only(x=None, eps=None, regressor: str = "network", **kwargs):
    """Variance model fitted on mean CRPS alone (no reliability term).

    ``regressor`` is one of ``network`` (needs ``splits``), ``poly`` or
    ``pointwise``. Pointwise returns the per-sample sigmas |eps|/sqrt(log 2).
    """
    if regressor == "network":
        return estimators.fit_network(x, eps, loss="crps", **kwargs)
    if regressor == "poly":
        return estimators.fit_polynomial(x, eps, loss="crps", **kwargs)
    if regressor == "pointwise":
        return estimators.fit_pointwise(eps, loss="crps")
    raise DomainError(f"unknown regressor {regressor!r}")


# ----------------------------------------------------------------- k-means


@dataclass(frozen=True)
class KMeansSigmaModel:
    centroids: np.ndarray
    sigmas: np.ndarray
    x_transform: Standardizer
    inertia: float = math.nan

    @property
    def k(self) -> int:
        return self.sigmas.size

    def assign(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z = self.x_transform.transform(x)
        d2 = ((z[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def predict_sigma(self, x) -> np.ndarray:
        return self.sigmas[self.assign(x)]


def farthest_point_seeds(z, k, rng):
    """First centre uniformly at random, then repeatedly the farthest point."""
    idx = [int(rng.integers(z.shape[0]))]
    d2 = ((z - z[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        idx.append(nxt)
        d2 = np.minimum(d2, ((z - z[nxt]) ** 2).sum(axis=1))
    return z[idx]


def fit_kmeans_sigma(x_train, eps_train, k: int, seed: int = 0, n_init: int = 10) -> KMeansSigmaModel:
    """Cluster standardized inputs and give each cluster the std of its errors.

    Lloyd iterations start from ``n_init`` farthest-point seedings; the run
    with the smallest within-cluster sum of squares is kept. Clusters with
    fewer than two members or zero spread get the global error std.
    """
    x = np.asarray(x_train, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    eps = np.asarray(eps_train, dtype=float)
    if not 1 <= k <= x.shape[0]:
        raise DomainError(f"k must be in [1, {x.shape[0]}], got {k}")
    xt = Standardizer.fit(x)
    z = xt.transform(x)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        init = farthest_point_seeds(z, k, rng)
        if np.unique(init, axis=0).shape[0] < k:
            # Fewer distinct points than clusters: duplicated seeds collapse.
            continue
        km = KMeans(n_clusters=k, init=init, n_init=1, random_state=int(rng.integers(2**31))).fit(z)
        if best is None or km.inertia_ < best.inertia_:
            best = km
    global_sigma = float(np.std(eps)) or float(np.mean(np.abs(eps))) or 1.0
    if best is None:
        log.warning("k-means seeding failed for k=%d; falling back to a single global sigma", k)
        return KMeansSigmaModel(np.zeros((1, z.shape[1])), np.array([global_sigma]), xt)
    labels = best.labels_
    sigmas = np.full(k, global_sigma)
    for c in range(k):
        members = eps[labels == c]
        if members.size >= 2 and np.std(members) > 0:
            sigmas[c] = np.std(members)
    return KMeansSigmaModel(best.cluster_centers_, sigmas, xt, float(best.inertia_))


# ----------------------------------------------------------- recalibration


@dataclass(frozen=True)
class RecalibrationMap:
    """Monotone piecewise-linear map of [0, 1] onto itself with R(0)=0, R(1)=1."""

    knots_x: np.ndarray
    knots_y: np.ndarray

    def __call__(self, p):
        out = np.interp(p, self.knots_x, self.knots_y)
        return float(out) if np.ndim(out) == 0 else out

    @classmethod
    def identity(cls):
        return cls(np.array([0.0, 1.0]), np.array([0.0, 1.0]))


def isotonic_fit(x, y, weights=None) -> np.ndarray:
    """Nondecreasing least-squares fit of ``y`` on ``x`` (pool adjacent violators)."""
    return IsotonicRegression(increasing=True).fit_transform(np.asarray(x, float), np.asarray(y, float), sample_weight=weights)


def fit_recalibration(phis_val) -> RecalibrationMap:
    """Isotonic map from predicted to observed probability on a held-out set.

    Each predicted probability p_i is paired with the fraction of held-out
    probabilities <= p_i; the isotonic fit of those pairs, pinned at (0, 0)
    and (1, 1), is interpolated linearly.
    """
    p = np.sort(np.asarray(phis_val, dtype=float).ravel())
    if p.size < 10:
        raise DomainError("recalibration needs at least 10 held-out probabilities")
    if np.unique(p).size < 2:
        log.warning("fewer than two distinct probabilities; using the identity map")
        return RecalibrationMap.identity()
    freq = np.searchsorted(p, p, side="right") / p.size
    fitted = np.clip(isotonic_fit(p, freq), 0.0, 1.0)
    xs, first = np.unique(p, return_index=True)
    ys = fitted[first]
    keep = (xs > 0.0) & (xs < 1.0)
    kx = np.concatenate([[0.0], xs[keep], [1.0]])
    ky = np.concatenate([[0.0], ys[keep], [1.0]])
    ky = np.maximum.accumulate(ky)
    return RecalibrationMap(kx, ky)


def _std_cdf(z):
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def recalibrated_cdf(rmap: RecalibrationMap, mu: float, sigma: float):
    """cdf of the recalibrated forecast, y -> R(Phi((y - mu) / sigma))."""
    return lambda y: rmap(_std_cdf((y - mu) / sigma))


class _RecalTable:
    """Antiderivatives of G^2 and (1 - G)^2 for G(z) = R(Phi(z)).

    The CRPS of the recalibrated N(mu, sigma^2) forecast at observation y is
    sigma * (A(z) + B(z)) with z = (y - mu) / sigma, A(t) = int_{-inf}^t G^2
    and B(t) = int_t^inf (1 - G)^2. Cells are integrated with Simpson's rule;
    the knots of R (kinks of G) are grid points, so G is smooth in each cell.
    """

    def __init__(self, rmap, half_width=12.0, n=120001):
        self.rmap = rmap
        self.L = half_width
        kinks = math.sqrt(2.0) * erfinv(2.0 * rmap.knots_x[1:-1] - 1.0)
        kinks = kinks[np.abs(kinks) < half_width]
        z = np.union1d(np.linspace(-half_width, half_width, n), kinks)
        G = self._g(z)
        Gm = self._g(0.5 * (z[:-1] + z[1:]))
        h = np.diff(z) / 6.0
        cell_a = h * (G[:-1] ** 2 + 4.0 * Gm**2 + G[1:] ** 2)
        cell_b = h * ((1 - G[:-1]) ** 2 + 4.0 * (1 - Gm) ** 2 + (1 - G[1:]) ** 2)
        self.z, self.G = z, G
        self.A = np.concatenate([[0.0], np.cumsum(cell_a)])
        self.B = np.concatenate([np.cumsum(cell_b[::-1])[::-1], [0.0]])

    def _g(self, z):
        return np.asarray(self.rmap(_std_cdf(z)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        L, z, G = self.L, self.z, self.G
        tc = np.clip(t, -L, L)
        k = np.clip(np.searchsorted(z, tc, side="right") - 1, 0, z.size - 2)
        # Split the cell holding t and integrate both parts to G(t) itself.
        gt = self._g(tc)
        ga = self._g(0.5 * (z[k] + tc))
        gb = self._g(0.5 * (tc + z[k + 1]))
        A = self.A[k] + (tc - z[k]) / 6.0 * (G[k] ** 2 + 4.0 * ga**2 + gt**2)
        B = self.B[k + 1] + (z[k + 1] - tc) / 6.0 * (
            (1 - gt) ** 2 + 4.0 * (1 - gb) ** 2 + (1 - G[k + 1]) ** 2)
        A = A + np.maximum(t - L, 0.0) * G[-1] ** 2
        B = B + np.maximum(-L - t, 0.0) * (1.0 - G[0]) ** 2
        return A + B


def recalibrated_crps(rmap: RecalibrationMap, mu, sigma, y_obs) -> np.ndarray:
    """Per-sample CRPS of recalibrated Gaussian forecasts (vectorized)."""
    sigma = np.asarray(sigma, dtype=float)
    z = (np.asarray(y_obs, dtype=float) - np.asarray(mu, dtype=float)) / sigma
    return sigma * _RecalTable(rmap)(z)


def score_recalibrated(rmap: RecalibrationMap, mu, sigma, y_obs, variant=RsVariant.PRACTICAL):
    """Score recalibrated forecasts; returns ``(breakdown, cal_err_pct)``.

    CRPS is integrated numerically over the recalibrated cdf. The reliability
    score is evaluated on the recalibrated probabilities mapped back to
    standardized-error units; NLPD is not defined for the piecewise map and
    is reported as NaN.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    y = np.asarray(y_obs, dtype=float)
    eps = y - mu
    crps = recalibrated_crps(rmap, mu, sigma, y)
    pit = np.asarray(rmap(_std_cdf(eps / sigma)))
    cal = calibration_error(reliability_diagram(pit))
    eta = np.sort(erfinv(np.clip(2.0 * pit - 1.0, -1 + 1e-16, 1 - 1e-16)))
    rs = reliability_score(eta, variant)
    beta = ar_weight(eps, variant, fallback=0.5)
    crps_mean = float(np.mean(crps))
    bd = ScoreBreakdown(
        crps_mean=crps_mean,
        rs=rs,
        ar=beta * crps_mean + (1.0 - beta) * rs,
        nlpd_mean=math.nan,
        beta=beta,
        crps_min=crps_min(eps),
        rs_min=rs_min(eps.size, variant),
        n=eps.size,
        variant=RsVariant(variant),
    )
    return bd, cal
