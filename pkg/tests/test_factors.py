import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_panel, scalar_mean_std, scalar_pearson
from fusionquant.factors import (
    DimensionError, EmptyPanelError, FactorPanel, InsufficientDataError, NeutralizationWarning, Stage,
    StageError, compute_ic, design_matrix, drop_null_rows, forward_returns_by_date, forward_returns_by_stock,
    neutralize, pca_fit, pca_transform, preprocess, winsorize_3sigma, zscore,
)


def one_date_panel(values, mktcap=None, industry=None, stage=Stage.RAW):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n = len(values)
    mktcap = np.exp(np.linspace(20, 24, n)) if mktcap is None else np.asarray(mktcap, dtype=float)
    industry = np.array(["A"] * n) if industry is None else np.asarray(industry)
    p = FactorPanel.from_rows(np.repeat(np.datetime64("2020-01-02"), n), [f"S{i:03d}" for i in range(n)],
                              tuple(f"f{j}" for j in range(values.shape[1])), values, mktcap, industry)
    return p.replace(stage=stage)


def test_drop_nulls_identity_and_rule():
    p = one_date_panel(np.ones((3, 52)))
    assert drop_null_rows(p).n_rows == 3
    v = np.ones((3, 52))
    v[1, 17] = np.nan
    out = drop_null_rows(one_date_panel(v))
    assert out.n_rows == 2 and out.stage == Stage.CLEANED
    v[:, 0] = np.nan
    with pytest.raises(EmptyPanelError):
        drop_null_rows(one_date_panel(v))


def test_stage_order_enforced():
    p = one_date_panel([1.0, 2.0, 3.0])
    with pytest.raises(StageError):
        zscore(p)
    with pytest.raises(StageError):
        compute_ic(p, np.zeros(3))


@pytest.mark.parametrize("xs", [[0, 0, 0, 0], [-1, 0, 1]])
def test_winsorize_no_change(xs):
    p = one_date_panel(xs, stage=Stage.CLEANED)
    np.testing.assert_array_equal(winsorize_3sigma(p).values[:, 0], xs)


def test_winsorize_clamps_outlier_to_scalar_bound():
    rng = np.random.default_rng(0)
    xs = rng.normal(0, 1, 100)
    xs[37] = 10.0
    out = winsorize_3sigma(one_date_panel(xs, stage=Stage.CLEANED)).values[:, 0]
    mu, sd = scalar_mean_std(xs.tolist())
    assert out[37] == pytest.approx(mu + 3 * sd, abs=1e-12)
    mask = np.arange(100) != 37
    np.testing.assert_array_equal(out[mask], xs[mask])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3)))
def test_winsorize_within_bounds_and_idempotent_bounds(xs):
    p = winsorize_3sigma(one_date_panel(xs, stage=Stage.CLEANED))
    lo, hi = p.bounds
    assert np.all(p.values[:, 0] >= lo[0, 0] - 1e-9) and np.all(p.values[:, 0] <= hi[0, 0] + 1e-9)


def test_neutralize_perfect_fit():
    cap = np.exp(np.linspace(20, 25, 12))
    out = neutralize(one_date_panel(np.log(cap), mktcap=cap, stage=Stage.WINSORIZED))
    assert np.max(np.abs(out.values)) < 1e-8


def test_neutralize_orthogonal_input_is_demeaned():
    rng = np.random.default_rng(1)
    n = 30
    cap = np.exp(rng.uniform(20, 25, n))
    ind = np.array(["A", "B", "C"] * 10)
    X = design_matrix(cap, ind)
    q, _ = np.linalg.qr(X)
    y = rng.normal(size=n)
    y = y - q @ (q.T @ y) + 3.0  # orthogonal to the design, then shifted
    out = neutralize(one_date_panel(y, mktcap=cap, industry=ind, stage=Stage.WINSORIZED)).values[:, 0]
    np.testing.assert_allclose(out, y - y.mean(), atol=1e-8)


def test_neutralize_singular_design_falls_back():
    cap = np.exp(np.linspace(20, 25, 4))
    ind = np.array(["A", "B", "C", "D"])  # one stock per industry
    p = one_date_panel([1.0, 3.0, 2.0, 5.0], mktcap=cap, industry=ind, stage=Stage.WINSORIZED)
    with pytest.warns(NeutralizationWarning):
        out = neutralize(p)
    assert any("ln(mktcap) only" in n for n in out.notes)
    X = design_matrix(cap, ind, with_industry=False)
    assert np.max(np.abs(X.T @ out.values[:, 0])) < 1e-9


def test_zscore_examples():
    np.testing.assert_allclose(zscore(one_date_panel([1, 2, 3], stage=Stage.NEUTRALIZED)).values[:, 0], [-1, 0, 1])
    np.testing.assert_array_equal(zscore(one_date_panel([5, 5, 5], stage=Stage.NEUTRALIZED)).values[:, 0], [0, 0, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_preprocess_output_is_standardized(seed):
    rng = np.random.default_rng(seed)
    p = preprocess(random_panel(rng, n_dates=2, n_stocks=20, n_factors=2))
    assert p.stage == Stage.STANDARDIZED
    for sl in p.cross_sections():
        v = p.values[sl]
        assert np.allclose(v.mean(axis=0), 0, atol=1e-10)
        sd = v.std(axis=0, ddof=1)
        assert np.all((np.abs(sd - 1) < 1e-10) | (sd == 0))


def std_panel(values):
    values = np.asarray(values, dtype=float)
    n_dates = len(values) // 10
    dates = np.repeat(np.datetime64("2020-01-01") + np.arange(n_dates), 10)
    stocks = np.tile([f"S{i}" for i in range(10)], n_dates)
    return FactorPanel.from_rows(dates, stocks, tuple(f"f{j}" for j in range(values.shape[1])), values,
                                 np.ones(len(values)), np.array(["A"] * len(values))).replace(stage=Stage.STANDARDIZED)


def test_ic_perfect_correlation():
    rng = np.random.default_rng(2)
    idx_ret = np.repeat(rng.normal(0, 0.01, 20), 10)
    report = compute_ic(std_panel(idx_ret[:, None]), idx_ret)
    assert report.ic[0] == pytest.approx(1.0, abs=1e-12)


def test_ic_noise_bound():
    rng = np.random.default_rng(3)
    report = compute_ic(std_panel(rng.normal(size=(10_000, 1))), rng.normal(size=10_000))
    assert abs(report.ic[0]) < 0.05


def test_ic_selection_by_magnitude():
    rng = np.random.default_rng(4)
    n = 20_000
    r = rng.normal(size=n)
    mix = lambda rho: rho * r + math.sqrt(1 - rho * rho) * rng.normal(size=n)
    report = compute_ic(std_panel(np.column_stack([mix(0.3), mix(-0.5), mix(0.1)])), r, k=2)
    assert report.selected == ("f1", "f0")
    assert [row[2] for row in report.rows()] == [1, 2, 3]


def test_ic_ties_broken_by_name():
    r = np.random.default_rng(5).normal(size=30)
    report = compute_ic(std_panel(np.column_stack([r, r, -r])), r, k=3)
    assert report.selected == ("f0", "f1", "f2")


def test_ic_needs_three_pairs():
    r = np.full(10, np.nan)
    r[:2] = 0.1
    with pytest.raises(InsufficientDataError):
        compute_ic(std_panel(np.ones((10, 1))), r)
    with pytest.raises(DimensionError):
        compute_ic(std_panel(np.ones((10, 1))), np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ic_matches_scalar_pearson_with_nans(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 2))
    r = rng.normal(size=40)
    r[rng.random(40) < 0.2] = np.nan
    ok = np.isfinite(r)
    report = compute_ic(std_panel(x), r)
    for j in range(2):
        assert report.ic[j] == pytest.approx(scalar_pearson(x[ok, j].tolist(), r[ok].tolist()), abs=1e-12)


def test_forward_returns_alignment():
    dates = np.datetime64("2020-01-01") + np.arange(4)
    close = np.array([10.0, 11.0, 12.1, 12.1])
    panel = FactorPanel.from_rows(np.repeat(dates, 2), ["A", "B"] * 4, ("f",), np.zeros((8, 1)),
                                  np.ones(8), np.array(["I"] * 8))
    by_date = forward_returns_by_date(panel, dates, close)
    np.testing.assert_allclose(by_date, [0.1, 0.1, 0.1, 0.1, 0.0, 0.0, np.nan, np.nan])

    class S:
        def __init__(self, c):
            self.dates, self.close = dates, np.asarray(c, dtype=float)

    by_stock = forward_returns_by_stock(panel, {"A": S([1, 2, 2, 1]), "B": S([4, 2, 1, 1])})
    np.testing.assert_allclose(by_stock, [1.0, -0.5, 0.0, -0.5, -0.5, 0.0, np.nan, np.nan])


def test_pca_duplicate_column_rank_deficient():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(2, 100))
    model = pca_fit(np.column_stack([a, b, a]), 3)
    assert model.explained_ratio[2] == pytest.approx(0.0, abs=1e-10)


def test_pca_transform_examples():
    rng = np.random.default_rng(7)
    rows = rng.normal(size=(50, 4)) @ rng.normal(size=(4, 4))
    model = pca_fit(rows, 3)
    np.testing.assert_allclose(model.transform(model.mean), 0.0, atol=1e-12)
    np.testing.assert_allclose(model.transform(model.mean + model.components[0]), [1, 0, 0], atol=1e-12)
    for row in rows[:10]:
        assert np.linalg.norm(model.transform(row)) <= np.linalg.norm(row - model.mean) + 1e-10
    with pytest.raises(DimensionError):
        pca_transform(model, np.ones(5))


def test_pca_sign_convention_and_order():
    rng = np.random.default_rng(8)
    model = pca_fit(rng.normal(size=(80, 5)) * np.array([5, 4, 3, 2, 1]), 5)
    assert np.all(np.diff(model.explained_ratio) <= 1e-15)
    lead = model.components[np.arange(5), np.argmax(np.abs(model.components), axis=1)]
    assert np.all(lead > 0)


def test_pca_errors():
    with pytest.raises(DimensionError):
        pca_fit(np.ones((10, 2)), 3)
    with pytest.raises(InsufficientDataError):
        pca_fit(np.ones((2, 3)), 2)


def test_panel_duplicate_rows_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        FactorPanel.from_rows(["2020-01-01"] * 2, ["A", "A"], ("f",), np.zeros((2, 1)), np.ones(2), ["I", "I"])


def test_no_warnings_on_regular_panel():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        preprocess(random_panel(np.random.default_rng(9), n_dates=3, n_stocks=40))
