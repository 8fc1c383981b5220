import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize
from scipy.stats import norm

from survsens.data import make_folds
from survsens.estimation import bounds_on_grid, effect_bounds, estimate_components
from survsens.inference import (CovarianceError, GridError, bivariate_rect_quantile, g, g_inv, jittered_cholesky,
                                pointwise_ci, rect_probability, uniform_band, uniform_test)
from survsens.simulation import DgpConfig, generate, study_nuisance_config

GRID = np.round(np.arange(0.1, 2.01, 0.1), 10)


@pytest.fixture(scope="module")
def comp(sim1000):
    folds = make_folds(sim1000.n, 5, 3, sim1000)
    return estimate_components(sim1000, folds, GRID, study_nuisance_config())


# ---------------------------------------------------------------- critical values

def test_degenerate_critical_value():
    assert bivariate_rect_quantile(1, 1, 1, 0.05) == pytest.approx(norm.ppf(0.975), abs=1e-6)


def test_independent_critical_value():
    oracle = optimize.brentq(lambda c: norm.cdf(c) ** 2 - 0.95, 0, 5, xtol=1e-14)
    assert bivariate_rect_quantile(1, 1, 0, 0.05) == pytest.approx(oracle, abs=1e-6)
    assert oracle == pytest.approx(1.9545, abs=1e-4)


@pytest.mark.parametrize("sd_l,sd_u,rho,alpha", [(1.0, 2.0, 0.6, 0.05), (0.4, 0.3, -0.8, 0.1)])
def test_rect_quantile_monte_carlo(sd_l, sd_u, rho, alpha):
    c = bivariate_rect_quantile(sd_l, sd_u, rho * sd_l * sd_u, alpha)
    rng = np.random.default_rng(99)
    n = 10 ** 7
    z1 = rng.standard_normal(n)
    z2 = rho * z1 + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    p = np.mean((sd_l * z1 <= c) & (sd_u * z2 >= -c))
    assert abs(p - (1 - alpha)) <= 3 * math.sqrt(alpha * (1 - alpha) / n)


@given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(-1, 1), st.sampled_from([0.01, 0.05, 0.1, 0.2]))
def test_rect_quantile_range(sd_l, sd_u, rho, alpha):
    c = bivariate_rect_quantile(sd_l, sd_u, rho * sd_l * sd_u, alpha)
    assert abs(rect_probability(c, sd_l, sd_u, rho * sd_l * sd_u) - (1 - alpha)) < 1e-7
    # a single one-sided event already needs z_{1-alpha}; the union bound caps it at z_{1-alpha/2}
    assert norm.ppf(1 - alpha) * min(sd_l, sd_u) - 1e-7 <= c <= norm.ppf(1 - alpha / 2) * max(sd_l, sd_u) + 1e-7


def test_invalid_covariance():
    with pytest.raises(CovarianceError):
        bivariate_rect_quantile(1, 1, 1.5)
    with pytest.raises(ValueError):
        bivariate_rect_quantile(1, 1, 0, alpha=1.2)


def test_cholesky_jitter_on_singular_matrix():
    v = np.array([1.0, 2.0, 3.0])
    L, j = jittered_cholesky(np.outer(v, v))
    assert j > 0 and np.allclose(L @ L.T, np.outer(v, v), atol=1e-4)


# ---------------------------------------------------------------- pointwise intervals

def test_v_zero_interval_is_wald(comp):
    b = effect_bounds(comp, 0.0, t=1.0)
    ci = pointwise_ci(b)
    sd = math.sqrt(np.mean(comp.at(1.0).eif_theta[:, 0] ** 2))
    half = norm.ppf(0.975) * sd / math.sqrt(comp.n)
    assert ci.lower_limit == pytest.approx(b.theta - half, abs=1e-8)
    assert ci.upper_limit == pytest.approx(b.theta + half, abs=1e-8)


def test_ci_contains_bounds_and_widens(comp):
    prev = None
    for v in np.linspace(0, 0.2, 11):
        for tr in (False, True):
            ci = pointwise_ci(effect_bounds(comp, v, t=1.5), transformed=tr)
            assert ci.lower_limit <= ci.lower <= ci.upper <= ci.upper_limit
        ci = pointwise_ci(effect_bounds(comp, v, t=1.5))
        if prev is not None:
            assert ci.lower_limit <= prev.lower_limit and ci.upper_limit >= prev.upper_limit
        prev = ci


def test_transformed_limits_inside_unit_interval(comp):
    ci_plain = pointwise_ci(effect_bounds(comp, 50.0, t=1.0))
    with pytest.warns(RuntimeWarning, match="clamped"):
        ci = pointwise_ci(effect_bounds(comp, 50.0, t=1.0), transformed=True)
    assert ci_plain.lower_limit < -1 or ci_plain.upper_limit > 1
    assert -1 < ci.lower_limit < ci.upper_limit < 1


def test_conservative_interval_uses_marginal_quantiles(comp):
    b = effect_bounds(comp, 0.01, t=1.0)
    ci = pointwise_ci(b, conservative=True)
    z, rn = norm.ppf(0.975), math.sqrt(b.n)
    assert ci.lower_limit == pytest.approx(b.lower - z * math.sqrt(b.var_lower) / rn, abs=1e-14)
    assert ci.upper_limit == pytest.approx(b.upper + z * math.sqrt(b.var_upper) / rn, abs=1e-14)
    # each side misses with probability alpha/2, so joint coverage is at least 1 - alpha
    corr = b.cov_ul / math.sqrt(b.var_lower * b.var_upper)
    assert rect_probability(z, 1.0, 1.0, corr) >= 0.95 - 1e-9


def test_g_round_trip():
    x = np.linspace(-0.99, 0.99, 41)
    np.testing.assert_allclose(g_inv(g(x)), x, atol=1e-14)


def test_transformed_matches_plain_at_large_n():
    data = generate(DgpConfig(n=5000, seed=3)).data
    c = estimate_components(data, make_folds(data.n, 5, 0, data), [1.0], study_nuisance_config())
    b = effect_bounds(c, 1e-4)
    plain, tr = pointwise_ci(b), pointwise_ci(b, transformed=True)
    width = plain.upper_limit - plain.lower_limit
    assert abs(plain.lower_limit - tr.lower_limit) <= 0.1 * width
    assert abs(plain.upper_limit - tr.upper_limit) <= 0.1 * width


# ---------------------------------------------------------------- bands and test

def test_band_dominates_pointwise(comp):
    for v in (0.0, 1e-3):
        bg = bounds_on_grid(comp, v)
        band = uniform_band(bg, n_paths=2000, seed=1)
        for j in range(len(bg)):
            ci = pointwise_ci(bg[j])
            assert band.critical >= ci.critical
            assert band.lower_limit[j] <= ci.lower_limit and band.upper_limit[j] >= ci.upper_limit


def test_single_point_band_matches_pointwise(comp):
    bg = bounds_on_grid(comp.select([1.0]), 1e-3)
    band = uniform_band(bg, n_paths=20000, seed=5)
    c = pointwise_ci(bg[0]).critical
    assert abs(band.critical - c) / c <= 0.01


def test_bands_widen_with_v(comp):
    prev = None
    for v in (0.0, 1e-3, 1e-2, 0.05):
        for tr in (False, True):
            band = uniform_band(bounds_on_grid(comp, v), n_paths=2000, seed=4, transformed=tr)
            assert np.all(band.lower_limit <= band.lower) and np.all(band.upper <= band.upper_limit)
        band = uniform_band(bounds_on_grid(comp, v), n_paths=2000, seed=4)
        if prev is not None:
            assert np.all(band.lower_limit <= prev.lower_limit + 1e-12)
            assert np.all(band.upper_limit >= prev.upper_limit - 1e-12)
        prev = band


def test_band_reproducible(comp):
    bg = bounds_on_grid(comp, 1e-3)
    a, b = uniform_band(bg, n_paths=2000, seed=7), uniform_band(bg, n_paths=2000, seed=7)
    assert a.critical == b.critical and np.array_equal(a.lower_limit, b.lower_limit)
    ta, tb = uniform_test(bg, 0.0, n_paths=2000, seed=7), uniform_test(bg, 0.0, n_paths=2000, seed=7)
    assert ta.p_value == tb.p_value


def test_transformed_band_inside_unit_interval(comp):
    with pytest.warns(RuntimeWarning, match="clamped"):
        band = uniform_band(bounds_on_grid(comp, 20.0), n_paths=2000, seed=0, transformed=True)
    assert np.all(band.lower_limit > -1) and np.all(band.upper_limit < 1)


def test_uniform_test_interior_null(comp):
    res = uniform_test(bounds_on_grid(comp, 5.0), theta0=float(np.mean(comp.theta)), n_paths=2000)
    assert res.statistic < 0 <= res.critical and not res.reject
    assert 0 <= res.p_value <= 1 and res.reject == (res.statistic > res.critical)


def test_band_grid_errors(comp):
    with pytest.raises(ValueError):
        uniform_band(bounds_on_grid(comp, 0.0), n_paths=500)
    bad = comp.select([1.0, 0.5])
    with pytest.raises(GridError):
        uniform_band(bounds_on_grid(bad, 0.0), n_paths=1000)


@pytest.mark.slow
def test_uniform_test_power():
    grid = np.linspace(0.25, 2.0, 8)
    rejections = 0
    for rep in range(100):
        data = generate(DgpConfig(n=2500, seed=1000 + rep)).data
        c = estimate_components(data, make_folds(data.n, 5, rep, data), grid, study_nuisance_config())
        rejections += uniform_test(bounds_on_grid(c, 0.0), 0.0, n_paths=1000, seed=rep).reject
    assert rejections >= 80
