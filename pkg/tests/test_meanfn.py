import numpy as np
import pytest
from scipy import stats

from calibra.datasets import Dataset, gen_toy
from calibra.errors import ContractError, DomainError
from calibra.meanfn import (
    MeanModel,
    column,
    exact_toy,
    fit_kernel_ridge,
    fit_network_mse,
    residuals,
)
from calibra.optim import OptimOptions


def test_unknown_kind():
    with pytest.raises(DomainError):
        MeanModel("gp")


def test_kernel_ridge_interpolates_linear_data():
    x = np.linspace(0, 1, 40)
    y = 3 * x - 1
    m = fit_kernel_ridge(x, y, grid=[(0.5, 1e-10), (0.2, 1e-10)])
    assert np.mean((m.predict(x) - y) ** 2) <= 1e-6


def test_kernel_ridge_duplicate_inputs():
    x = np.repeat(np.linspace(0, 1, 10), 3)
    y = np.sin(3 * x) + np.tile([0.0, 0.1, -0.1], 10)
    m = fit_kernel_ridge(x, y)
    assert np.all(np.isfinite(m.predict(x)))
    # Repeated x with different y: the fit averages them.
    np.testing.assert_allclose(m.predict(x[::3]), np.sin(3 * x[::3]), atol=0.05)


def test_kernel_ridge_needs_five_points():
    with pytest.raises(DomainError):
        fit_kernel_ridge([0.0, 1.0], [0.0, 1.0])


def test_kernel_ridge_tracks_g_mean():
    d = gen_toy("G", 100, 0)
    m = fit_kernel_ridge(d.x, d.y)
    g = np.linspace(0.05, 0.95, 50)
    assert np.sqrt(np.mean((m.predict(g) - 2 * np.sin(2 * np.pi * g)) ** 2)) < 0.3


def test_kernel_ridge_validation_selection():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=60)
    y = np.sin(6 * x) + rng.normal(0, 0.1, 60)
    xv = rng.uniform(size=30)
    yv = np.sin(6 * xv) + rng.normal(0, 0.1, 30)
    m = fit_kernel_ridge(x, y, val=(xv, yv))
    assert m.params["selection_mse"] == pytest.approx(np.mean((m.predict(xv) - yv) ** 2))


def test_kernel_ridge_is_linear_in_y():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(30, 2))
    y1, y2 = rng.normal(size=30), rng.normal(size=30)
    grid = [(0.3, 1e-3)]
    xq = rng.uniform(size=(10, 2))
    a, b = 2.5, -0.7
    lhs = fit_kernel_ridge(x, a * y1 + b * y2, grid=grid).predict(xq)
    rhs = a * fit_kernel_ridge(x, y1, grid=grid).predict(xq) + b * fit_kernel_ridge(x, y2, grid=grid).predict(xq)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_network_constant_targets():
    x = np.random.default_rng(0).uniform(size=(40, 2))
    y = np.full(40, 1.7)
    m = fit_network_mse(x, y, (np.arange(30), np.arange(30, 40)), OptimOptions(max_iters=200, restarts=1))
    np.testing.assert_allclose(m.predict(x), 1.7, atol=1e-3)


def test_network_linear_2d_targets():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(200, 2))
    y = 1.5 * x[:, 0] - 0.8 * x[:, 1] + 0.3
    tr, va = np.arange(150), np.arange(150, 200)
    m = fit_network_mse(x, y, (tr, va), OptimOptions(max_iters=2000, restarts=2, seed=3))
    # Oracle: the closed-form least-squares fit is exact on these targets.
    A = np.column_stack([x[tr], np.ones(tr.size)])
    coef, *_ = np.linalg.lstsq(A, y[tr], rcond=None)
    np.testing.assert_allclose(coef, [1.5, -0.8, 0.3], atol=1e-12)
    yt = m.params["y_transform"]
    val_mse_std = np.mean((yt.transform(m.predict(x[va])) - yt.transform(y[va])) ** 2)
    assert val_mse_std <= 1e-3


def test_residuals_exact_mean_noiseless():
    x = np.linspace(0, 1, 50)[:, None]
    d = Dataset(x=x, y=2 * np.sin(2 * np.pi * x[:, 0]))
    np.testing.assert_array_equal(residuals(d, exact_toy("G")), 0.0)


def test_residuals_g_data_are_gaussian():
    d = gen_toy("G", 2000, 5)
    eps = residuals(d, exact_toy("G"))
    assert stats.kstest(eps / d.true_sigma, "norm").pvalue > 0.05


def test_residuals_column_kind():
    d = Dataset(x=np.zeros((3, 1)), y=[1.0, 2.0, 3.0], extra={"pred": np.array([0.5, 2.0, 4.0]), "err": np.array([0.1, 0.2, 0.3])})
    np.testing.assert_array_equal(residuals(d, column("pred")), [0.5, 0.0, -1.0])
    np.testing.assert_allclose(residuals(d, column("err", holds="error")), [0.1, 0.2, 0.3], atol=1e-15)
    with pytest.raises(ContractError):
        residuals(d, column("missing"))
    with pytest.raises(DomainError):
        column("pred", holds="other")
