import math

import numpy as np
import pytest
from scipy.special import erfinv
from hypothesis import given, settings, strategies as st

from calibra.baselines import (
    RecalibrationMap,
    fit_crps_only,
    fit_kmeans_sigma,
    fit_recalibration,
    isotonic_fit,
    recalibrated_cdf,
    recalibrated_crps,
    score_recalibrated,
)
from calibra.datasets import gen_toy
from calibra.errors import DomainError
from calibra.estimators import fit_pointwise
from calibra.reliability import calibration_error_of, pit_values, standardize
from calibra.scores import crps_gaussian, crps_min, crps_numeric, reliability_score, rs_min, score_forecasts

from oracles import ks_envelope

ETA_CRPS = 0.5887050112577373  # sqrt(log 4) / 2


def test_crps_only_pointwise_closed_form():
    eps = np.random.default_rng(0).normal(size=50)
    sig = fit_crps_only(eps=eps, regressor="pointwise")
    np.testing.assert_allclose(sig, np.abs(eps) / math.sqrt(math.log(2)), rtol=1e-12)
    np.testing.assert_allclose(np.abs(standardize(eps, sig).etas), ETA_CRPS, rtol=1e-12)
    assert np.mean(crps_gaussian(0.0, sig, eps)) == pytest.approx(crps_min(eps), rel=1e-12)
    assert reliability_score(standardize(eps, sig).etas) > rs_min(eps.size)


def test_crps_only_unknown_regressor():
    with pytest.raises(DomainError):
        fit_crps_only(eps=[1.0, 2.0], regressor="tree")


def test_crps_only_less_calibrated_than_ar_on_g():
    seeds = range(10)
    wins = 0
    for s in seeds:
        d = gen_toy("G", 1000, s)
        eps = d.y - d.true_mean
        ar = calibration_error_of(eps, fit_pointwise(eps))
        crps = calibration_error_of(eps, fit_crps_only(eps=eps, regressor="pointwise"))
        wins += crps > ar
    assert wins / len(seeds) >= 0.9


def test_kmeans_single_cluster_is_global_std():
    rng = np.random.default_rng(0)
    x, eps = rng.uniform(size=(80, 3)), rng.normal(size=80)
    m = fit_kmeans_sigma(x, eps, 1)
    np.testing.assert_allclose(m.predict_sigma(rng.uniform(size=(5, 3))), np.std(eps))


def test_kmeans_recovers_two_blobs():
    rng = np.random.default_rng(1)
    xa = rng.normal([0, 0], 0.2, size=(500, 2))
    xb = rng.normal([5, 5], 0.2, size=(500, 2))
    eps = np.concatenate([rng.normal(0, 0.1, 500), rng.normal(0, 1.0, 500)])
    m = fit_kmeans_sigma(np.vstack([xa, xb]), eps, 2, seed=3)
    s = m.predict_sigma(np.array([[0.0, 0.0], [5.0, 5.0]]))
    assert s[0] == pytest.approx(0.1, rel=0.1)
    assert s[1] == pytest.approx(1.0, rel=0.1)


def test_kmeans_degenerate_k_equals_n():
    rng = np.random.default_rng(2)
    x, eps = rng.uniform(size=(12, 2)), rng.normal(size=12)
    m = fit_kmeans_sigma(x, eps, 12)
    assert np.all(m.sigmas > 0)
    np.testing.assert_allclose(m.sigmas, np.std(eps))


def test_kmeans_duplicate_points_fall_back():
    m = fit_kmeans_sigma(np.zeros((6, 1)), np.arange(6.0), 3)
    assert m.k == 1 and m.sigmas[0] == pytest.approx(np.std(np.arange(6.0)))
    with pytest.raises(DomainError):
        fit_kmeans_sigma(np.zeros((3, 1)), np.zeros(3), 4)


def test_kmeans_deterministic():
    rng = np.random.default_rng(5)
    x, eps = rng.normal(size=(200, 4)), rng.normal(size=200)
    a, b = fit_kmeans_sigma(x, eps, 5, seed=9), fit_kmeans_sigma(x, eps, 5, seed=9)
    np.testing.assert_array_equal(a.sigmas, b.sigmas)


def test_pav_pools_violating_pair():
    np.testing.assert_allclose(isotonic_fit([0.2, 0.8], [0.8, 0.2]), [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(10, 300))
def test_recalibration_map_is_monotone_and_pinned(seed, n):
    p = np.random.default_rng(seed).beta(0.5, 2.0, n)
    r = fit_recalibration(p)
    grid = np.linspace(0, 1, 1001)
    assert np.all(np.diff(r(grid)) >= 0)
    assert r(0.0) == 0.0 and r(1.0) == 1.0


def test_recalibration_of_calibrated_input_near_identity():
    n, seeds = 1000, 100
    inside = 0
    grid = np.linspace(0, 1, 2001)
    for s in range(seeds):
        r = fit_recalibration(np.random.default_rng(s).uniform(size=n))
        inside += 100 * np.max(np.abs(r(grid) - grid)) <= ks_envelope(n)
    assert inside / seeds >= 0.9


def test_recalibration_edge_cases(caplog):
    with pytest.raises(DomainError):
        fit_recalibration(np.linspace(0, 1, 5))
    r = fit_recalibration(np.full(20, 0.3))
    assert "identity" in caplog.text
    np.testing.assert_array_equal(r.knots_x, [0.0, 1.0])


def test_identity_map_leaves_scores_unchanged():
    rng = np.random.default_rng(4)
    mu, sig = rng.normal(size=30), rng.uniform(0.3, 2, 30)
    y = mu + sig * rng.normal(size=30)
    bd, cal = score_recalibrated(RecalibrationMap.identity(), mu, sig, y)
    plain = score_forecasts(mu, sig, y)
    assert bd.crps_mean == pytest.approx(plain.crps_mean, abs=1e-8)
    assert bd.rs == pytest.approx(plain.rs, abs=1e-9)
    assert cal == pytest.approx(calibration_error_of(y - mu, sig), abs=1e-9)


def test_recalibrated_crps_matches_quadrature():
    rng = np.random.default_rng(6)
    r = fit_recalibration(rng.beta(2, 2, 200))
    mu, sig = rng.normal(size=8), rng.uniform(0.2, 3, 8)
    y = mu + sig * rng.normal(0, 2, 8)
    fast = recalibrated_crps(r, mu, sig, y)
    # The map's knots are the cdf's kinks; quadrature splits there.
    kz = math.sqrt(2) * erfinv(2 * r.knots_x[1:-1] - 1)
    for i in range(8):
        ref = crps_numeric(recalibrated_cdf(r, mu[i], sig[i]), y[i],
                           lower=mu[i] - 14 * sig[i], upper=mu[i] + 14 * sig[i],
                           points=mu[i] + sig[i] * kz)
        assert fast[i] == pytest.approx(ref, rel=1e-10)


def _inflated_g(seed, factor=2.0):
    d = gen_toy("G", 1000, seed)
    eps = d.y - d.true_mean
    return eps, factor * d.true_sigma


def test_recalibration_fixes_inflated_sigma():
    eps, sig = _inflated_g(0)
    val, test = np.arange(500), np.arange(500, 1000)
    r = fit_recalibration(pit_values(eps[val], sig[val]))
    _, cal_after = score_recalibrated(r, np.zeros(500), sig[test], eps[test])
    before = calibration_error_of(eps[test], sig[test])
    # A doubled sigma puts the KS distance near max_z |Phi(z/2) - Phi(z)| = 16.7%.
    assert before > 12.0
    assert cal_after < before / 2


def test_recalibration_can_worsen_crps():
    # Calibrated forecasts, recalibrated from a small held-out set: the noisy
    # map improves nothing and the piecewise cdf costs CRPS.
    d = gen_toy("G", 2000, 0)
    eps, sig = d.y - d.true_mean, d.true_sigma
    val, test = np.arange(20), np.arange(20, 2000)
    r = fit_recalibration(pit_values(eps[val], sig[val]))
    bd, cal = score_recalibrated(r, np.zeros(test.size), sig[test], eps[test])
    plain = score_forecasts(np.zeros(test.size), sig[test], eps[test])
    assert bd.crps_mean > plain.crps_mean
