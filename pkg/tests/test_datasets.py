import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calibra.datasets import (
    Dataset,
    SplitSpec,
    Standardizer,
    TABULAR_STANDINS,
    gen_tabular,
    gen_toy,
    load_csv,
    split,
    split_indices,
    standardize,
    toy_mean,
    toy_sigma,
    write_columns,
    write_csv,
)
from calibra.errors import ContractError, DomainError


def test_toy_reference_values():
    assert toy_mean("G", np.array([0.0]))[0] == 0.0
    assert toy_sigma("G", np.array([0.0]))[0] == 0.5
    assert toy_sigma("W", np.array([0.0]))[0] == pytest.approx(0.26, abs=1e-15)
    assert toy_sigma("5D", np.zeros((1, 5)))[0] == pytest.approx(0.09, abs=1e-15)
    assert toy_sigma("Y", np.array([0.25]))[0] == pytest.approx(math.e / 3)


def test_5d_sigma_range():
    x = np.random.default_rng(0).uniform(size=(200000, 5))
    s = toy_sigma("5D", x)
    assert s.min() >= 0.09 - 1e-12 and s.max() <= 0.99 + 1e-12
    assert s.max() > 0.989 and s.min() < 0.091


@pytest.mark.parametrize("name,lo,hi,d", [("G", 0, 1, 1), ("Y", 0, 1, 1), ("W", 0, math.pi, 1), ("5D", 0, 1, 5)])
def test_gen_toy_domains_and_determinism(name, lo, hi, d):
    a = gen_toy(name, 500, 3)
    b = gen_toy(name, 500, 3)
    assert a.x.shape == (500, d)
    assert a.x.min() >= lo and a.x.max() <= hi
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, gen_toy(name, 500, 4).y)
    assert a.provenance["seed"] == 3 and "PCG64" in a.provenance["rng"]


def test_gen_toy_unknown():
    with pytest.raises(DomainError):
        gen_toy("Z", 10, 0)


@pytest.mark.parametrize("name", ["G", "Y", "W", "5D"])
def test_generator_moments_per_bin(name):
    d = gen_toy(name, 100_000, 11)
    r = d.y - d.true_mean
    # Pooled over x, the std of a Gaussian mixture is the rms of its sigmas.
    assert r.std() == pytest.approx(np.sqrt(np.mean(d.true_sigma**2)), rel=0.02)
    # Per x-bin the raw std is noisy when sigma varies tenfold inside a bin
    # (W has ~1% sampling sd), so bins compare standardized residuals.
    u = d.x.sum(axis=1)
    edges = np.quantile(u, np.linspace(0, 1, 6))
    for k in range(5):
        m = (u >= edges[k]) & (u <= edges[k + 1])
        assert (r[m] / d.true_sigma[m]).std() == pytest.approx(1.0, rel=0.02)


def test_dataset_is_immutable():
    d = gen_toy("G", 5, 0)
    with pytest.raises(ValueError):
        d.x[0, 0] = 1.0
    with pytest.raises(Exception):
        d.y = np.zeros(5)


def test_dataset_rejects_nonfinite():
    with pytest.raises(DomainError):
        Dataset(x=[[0.0], [1.0]], y=[0.0, math.nan])


def test_csv_round_trip_is_bit_exact(tmp_path):
    d = gen_toy("5D", 50, 2)
    p = tmp_path / "d.csv"
    write_csv(p, d)
    back = load_csv(p)
    np.testing.assert_array_equal(back.x, d.x)
    np.testing.assert_array_equal(back.y, d.y)
    np.testing.assert_array_equal(back.true_sigma, d.true_sigma)
    assert back.columns == ("x1", "x2", "x3", "x4", "x5")
    assert len(back.provenance["sha256"]) == 64


def test_load_csv_with_schema(tmp_path):
    p = tmp_path / "t.csv"
    write_columns(p, {"a": [1.0, 2.0], "b": [3.0, 4.0], "target": [5.0, 6.0], "pred": [5.5, 6.5]})
    d = load_csv(p, {"x": ["a", "b"], "y": "target", "extra": ["pred"]})
    assert d.x.shape == (2, 2)
    np.testing.assert_array_equal(d.extra["pred"], [5.5, 6.5])
    with pytest.raises(ContractError, match="missing"):
        load_csv(p, {"x": ["a", "zzz"], "y": "target"})


def test_load_csv_reports_bad_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,x2,y\n1,2,3\n4,nan,6\n7,8,9\n1,2,inf\n")
    with pytest.raises(DomainError, match=r"\[3, 5\]"):
        load_csv(p)
    p.write_text("x1,y\n1,2\n3,abc\n")
    with pytest.raises(ContractError, match=":3"):
        load_csv(p)
    p.write_text("")
    with pytest.raises(ContractError):
        load_csv(p)


def test_split_sizes():
    assert [len(i) for i in split_indices(100, SplitSpec((0.33, 0.33, 0.34), 0))] == [33, 33, 34]
    assert [len(i) for i in split_indices(10000, SplitSpec((0.70, 0.15, 0.15), 0))] == [7000, 1500, 1500]


def test_split_rejects_empty_partition():
    with pytest.raises(DomainError):
        split_indices(3, SplitSpec((0.9, 0.05, 0.05), 0))
    with pytest.raises(DomainError):
        SplitSpec((0.5, 0.5, 0.0))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(10, 2000), seed=st.integers(0, 2**31))
def test_split_disjoint_exhaustive_deterministic(n, seed):
    spec = SplitSpec((0.7, 0.15, 0.15), seed)
    a = split_indices(n, spec)
    b = split_indices(n, spec)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    allidx = np.concatenate(a)
    assert np.array_equal(np.sort(allidx), np.arange(n))


def test_split_datasets():
    tr, va, te = split(gen_toy("G", 100, 0), SplitSpec(seed=1))
    assert (tr.n, va.n, te.n) == (33, 33, 34)


def test_standardize_uses_training_statistics():
    rng = np.random.default_rng(0)
    tr = Dataset(x=rng.normal(3, 2, (200, 3)), y=rng.normal(5, 4, 200))
    te = Dataset(x=rng.normal(-1, 1, (50, 3)), y=rng.normal(0, 1, 50))
    trs, (tes,), (xt, yt) = standardize(tr, te)
    np.testing.assert_allclose(trs.x.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(trs.x.var(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(trs.y.mean(), 0, atol=1e-12)
    np.testing.assert_allclose(tes.x, (te.x - tr.x.mean(axis=0)) / tr.x.std(axis=0), atol=1e-12)
    np.testing.assert_allclose(xt.inverse(xt.transform(te.x)), te.x, atol=1e-12)
    np.testing.assert_allclose(yt.inverse(tes.y), te.y, atol=1e-12)


def test_standardizer_zero_variance_passthrough(caplog):
    v = np.column_stack([np.ones(10), np.arange(10.0)])
    s = Standardizer.fit(v)
    out = s.transform(v)
    np.testing.assert_array_equal(out[:, 0], 1.0)
    assert "zero-variance" in caplog.text
    assert Standardizer.from_dict(s.to_dict()).to_dict() == s.to_dict()


@pytest.mark.parametrize("name", sorted(TABULAR_STANDINS))
def test_tabular_standins(name):
    d = gen_tabular(name, 0)
    assert (d.n, d.dim) == TABULAR_STANDINS[name]
    assert np.all(d.true_sigma > 0)
    np.testing.assert_array_equal(gen_tabular(name, 0).y, d.y)
