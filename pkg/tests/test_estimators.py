from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_panel
from panelfe.errors import NotApplicable, SingularDesign
from panelfe.estimators import fe_fit, hk_correct, hk_fit, hpj_fit
from panelfe.panel import LagSpec, PanelDataset, build_lagged_design, split_halves, within_transform

seeds = st.integers(0, 2**31 - 1)


def _brute_fe(ds: PanelDataset) -> np.ndarray:
    # explicit dummy-variable regression
    n, T, p = ds.x.shape
    D = np.kron(np.eye(n), np.ones((T, 1)))
    X = np.hstack([ds.x.reshape(n * T, p), D])
    coef, *_ = np.linalg.lstsq(X, ds.y.reshape(-1), rcond=None)
    return coef[:p]


def test_exact_linear_recovers_slope(rng):
    x = rng.standard_normal((5, 6, 1))
    c = rng.standard_normal(5)
    ds = PanelDataset(2.0 * x[:, :, 0] + c[:, None], x)
    fit = fe_fit(ds)
    assert abs(fit.beta_hat[0] - 2.0) < 1e-10
    assert np.abs(fit.residuals).max() < 1e-10


def test_hand_panel_against_dummy_regression():
    ds = PanelDataset(np.array([[1.0, 3.0, 2.0], [0.0, 4.0, 5.0]]),
                      np.array([[[0.5], [1.0], [2.0]], [[1.0], [0.0], [3.0]]]))
    np.testing.assert_allclose(fe_fit(ds).beta_hat, _brute_fe(ds), rtol=1e-12)


@given(seeds, st.integers(1, 3))
def test_fe_matches_dummies_and_normal_equations(seed, p):
    ds = random_panel(np.random.default_rng(seed), n=5, T=6, p=p)
    fit = fe_fit(ds)
    np.testing.assert_allclose(fit.beta_hat, _brute_fe(ds), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fit.a_hat, fit.a_hat.T, rtol=0, atol=0)
    np.testing.assert_allclose(fit.a_hat @ fit.beta_hat, fit.s_hat, rtol=1e-10, atol=1e-12)
    wv = within_transform(ds)
    score = np.einsum("itp,it->p", wv.x_dot, fit.residuals)
    assert np.abs(score).max() < 1e-8 * max(1.0, np.abs(wv.x_dot).max() * np.abs(ds.y).max())


def test_singular_design_reports_ratio():
    x = np.ones((3, 4, 1)) * np.arange(3.0)[:, None, None]   # constant within individual
    with pytest.raises(SingularDesign) as info:
        fe_fit(PanelDataset(np.random.default_rng(0).standard_normal((3, 4)), x))
    assert info.value.ratio < 1e-12


def test_hpj_equals_independent_recomputation(rng):
    ds = random_panel(rng, n=7, T=10, p=2)
    h1, h2 = split_halves(ds)
    expected = 2 * fe_fit(ds).beta_hat - 0.5 * (fe_fit(h1).beta_hat + fe_fit(h2).beta_hat)
    got = hpj_fit(ds)
    np.testing.assert_allclose(got.beta_hat, expected, rtol=1e-12, atol=1e-14)
    wv = within_transform(ds)
    np.testing.assert_allclose(got.residuals, wv.y_dot - wv.x_dot @ got.beta_hat, atol=1e-13)


def test_hpj_first_order_cancellation():
    b, c, T = 0.5, 0.3, 24
    full, half = b + c / T, b + 2 * c / T
    assert abs(2 * full - 0.5 * (half + half) - b) < 1e-15
    assert 2 * b - 0.5 * (b + b) == b


def test_hpj_sub_panel_failure_is_tagged(rng):
    x = rng.standard_normal((3, 8, 1))
    x[:, :4, 0] = 1.0   # first half has no within variation
    with pytest.raises(SingularDesign) as info:
        hpj_fit(PanelDataset(rng.standard_normal((3, 8)), x))
    assert "S1" in info.value.where


def test_hk_examples():
    assert abs(hk_correct(0.8, 20) - 0.89) < 1e-15
    assert hk_correct(-1.0, 7) == -1.0
    y = np.random.default_rng(1).standard_normal((4, 9))
    ds = build_lagged_design(PanelDataset(y), LagSpec.parse("y:1"))
    fe = fe_fit(ds).beta_hat[0]
    hk = hk_fit(ds)
    assert hk.beta_hat[0] == pytest.approx(fe + (1 + fe) / ds.T, abs=1e-15)
    assert hk.se_hk == pytest.approx(np.sqrt((1 - hk.beta_hat[0] ** 2) / (ds.n * ds.T)))


def test_hk_not_applicable(rng):
    with pytest.raises(NotApplicable):
        hk_fit(random_panel(rng))
    y = rng.standard_normal((4, 9))
    with pytest.raises(NotApplicable):
        hk_fit(build_lagged_design(PanelDataset(y), LagSpec.parse("y:1,y:2")))
    with pytest.raises(NotApplicable):
        _ = fe_fit(random_panel(rng)).se_hk


@given(seeds)
def test_location_invariance_exact_on_dyadic_data(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(-64, 64, (5, 8, 1)) / 8.0
    y = rng.integers(-64, 64, (5, 8)) / 8.0
    a = rng.integers(-100, 100, 5).astype(float)
    base = PanelDataset(y, x)
    shifted = PanelDataset(y + a[:, None], x)
    for fit in (fe_fit, hpj_fit):
        assert np.array_equal(fit(base).beta_hat, fit(shifted).beta_hat)


@given(seeds)
def test_location_invariance_general(seed):
    rng = np.random.default_rng(seed)
    ds = random_panel(rng, n=6, T=8, p=2)
    a = rng.uniform(-50, 50, 6)
    moved = PanelDataset(ds.y + a[:, None], ds.x)
    for fit in (fe_fit, hpj_fit):
        np.testing.assert_allclose(fit(moved).beta_hat, fit(ds).beta_hat, rtol=1e-9, atol=1e-11)


@given(seeds, st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_scale_equivariance(seed, s, k):
    ds = random_panel(np.random.default_rng(seed), n=5, T=8, p=2)
    x2 = ds.x.copy()
    x2[:, :, 1] *= k
    for fit in (fe_fit, hpj_fit):
        b = fit(ds).beta_hat
        np.testing.assert_allclose(fit(PanelDataset(s * ds.y, ds.x)).beta_hat, s * b, rtol=1e-9, atol=1e-12)
        b2 = fit(PanelDataset(ds.y, x2)).beta_hat
        np.testing.assert_allclose(b2, [b[0], b[1] / k], rtol=1e-9, atol=1e-12)


@given(seeds)
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    ds = random_panel(rng, n=7, T=8, p=1)
    perm = rng.permutation(7)
    for fit in (fe_fit, hpj_fit):
        np.testing.assert_allclose(fit(ds.select_individuals(perm)).beta_hat, fit(ds).beta_hat,
                                   rtol=1e-12, atol=1e-14)
