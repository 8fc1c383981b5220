import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_dataset
from toys import GRID_POINTS, T_HORIZON, TOY_CONFIG, toy_population, toy_truth
from survsens.data import Dataset, make_folds
from survsens.estimation import (DegenerateBoundsWarning, bounds_on_grid, components_from_fits, confounding_level,
                                 effect_bounds, estimate_components, fit_cross, positive_part, rmst_bounds,
                                 rmst_components, rmst_from_fits, v_from_q)
from survsens.nuisance import NuisanceConfig
from survsens.simulation import quadrature_truth, study_nuisance_config

KM = NuisanceConfig(survival="km", censoring="km")


@pytest.fixture(scope="module")
def toy():
    data, folds = toy_population()
    return fit_cross(data, folds, TOY_CONFIG)


@pytest.fixture(scope="module")
def sim_components(sim1000):
    folds = make_folds(sim1000.n, 5, 3, sim1000)
    return estimate_components(sim1000, folds, [0.5, 1.0, 1.5, 2.0], study_nuisance_config())


# ---------------------------------------------------------------- positive part

@pytest.mark.parametrize("one_step,plug,want", [(0.3, 0.25, 0.3), (-0.01, 0.25, 0.25), (0.0, 0.25, 0.25)])
def test_positive_part(one_step, plug, want):
    assert positive_part(one_step, plug) == want


def test_positive_part_rejects_negative_plugin():
    with pytest.raises(AssertionError):
        positive_part(0.1, -0.2)


# ---------------------------------------------------------------- reductions and oracles

def test_theta_reduces_to_empirical_difference():
    rng = np.random.default_rng(8)
    n1, n0 = 250, 150                       # both divisible by the fold count
    a = np.r_[np.ones(n1, int), np.zeros(n0, int)]
    y = rng.exponential(np.where(a == 1, 2.0, 1.0))
    data = make_dataset(y, np.ones(a.size, int), a)
    folds = make_folds(data.n, 5, 1, data)
    times = [0.3, 0.8, 1.5]
    comp = estimate_components(data, folds, times, KM)
    want = [np.mean(y[a == 1] > t) - np.mean(y[a == 0] > t) for t in times]
    np.testing.assert_allclose(comp.theta, want, atol=1e-10)


@pytest.mark.parametrize("t", [1.5, T_HORIZON])
def test_toy_enumeration(toy, t):
    comp = components_from_fits(toy, [t])
    truth = toy_truth(t)
    assert abs(comp.theta[0] - truth["theta"]) <= 1e-10
    assert abs(comp.psi[0] - truth["psi"]) <= 0.01
    assert abs(comp.tau - truth["tau"]) <= 0.2


def test_toy_rmst_enumeration(toy):
    rc = rmst_from_fits(toy, T_HORIZON, GRID_POINTS)
    truth = toy_truth(T_HORIZON)
    assert abs(rc.gamma - truth["gamma"]) <= 1e-3 * T_HORIZON ** 2
    assert abs(rc.phi - truth["phi"]) <= 1e-3 * T_HORIZON


def test_plugin_tau_at_least_four(toy):
    comp = components_from_fits(toy, [1.0])
    assert comp.tau_plug >= 4


def test_components_against_quadrature_truth(sim2500):
    folds = make_folds(sim2500.n, 5, 0, sim2500)
    comp = estimate_components(sim2500, folds, [1.0], study_nuisance_config())
    truth = quadrature_truth([1.0])
    assert abs(comp.psi[0] - truth.psi_P[0]) <= 0.02
    assert abs(comp.tau - truth.tau_P) <= 0.2


def test_influence_vectors_centered(sim_components):
    np.testing.assert_allclose(sim_components.eif_theta.mean(axis=0), 0, atol=1e-12)
    assert abs(sim_components.eif_tau.mean()) < 1e-12


def test_determinism(sim1000):
    folds = make_folds(sim1000.n, 5, 3, sim1000)
    c1 = estimate_components(sim1000, folds, [1.0], study_nuisance_config())
    c2 = estimate_components(sim1000, make_folds(sim1000.n, 5, 3, sim1000), [1.0], study_nuisance_config())
    assert c1.theta.tobytes() == c2.theta.tobytes()
    assert c1.eif_psi.tobytes() == c2.eif_psi.tobytes() and c1.tau == c2.tau


@pytest.mark.parametrize("config", [KM, NuisanceConfig(), study_nuisance_config()], ids=["km", "cox", "cox-sqrt"])
def test_label_swap_antisymmetry(sim1000, config):
    folds = make_folds(sim1000.n, 5, 3, sim1000)
    d = sim1000
    swapped = Dataset(d.time, d.event, 1 - d.treatment, d.covariates, d.covariate_names)
    times = [0.5, 1.0, 2.0]
    c = estimate_components(d, folds, times, config)
    s = estimate_components(swapped, folds, times, config)
    np.testing.assert_allclose(s.theta, -c.theta, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.psi, c.psi, rtol=0, atol=1e-12)
    assert s.tau == pytest.approx(c.tau, rel=0, abs=1e-12)


# ---------------------------------------------------------------- bounds

def _fake_components(theta=0.05, psi=0.2, tau=5.0, n=10):
    from survsens.estimation import Components
    rng = np.random.default_rng(0)
    return Components(np.array([1.0]), np.array([theta]), np.array([psi]), np.array([psi]), np.array([psi]),
                      tau, tau, tau, np.array([theta]), rng.normal(size=(n, 1)), rng.normal(size=(n, 1)),
                      rng.normal(size=n), np.full((n, 1), 0.5), np.full(n, 0.5), np.full(n, 0.5),
                      np.r_[np.ones(n // 2), np.zeros(n - n // 2)], n)


def test_bounds_arithmetic():
    b = effect_bounds(_fake_components(), 0.001)
    assert b.half_width == pytest.approx(np.sqrt(0.001), abs=1e-15)
    assert b.lower == pytest.approx(0.05 - 0.0316227766, abs=1e-10)
    assert b.upper == pytest.approx(0.05 + 0.0316227766, abs=1e-10)


def test_v_zero_collapse(sim_components):
    bg = bounds_on_grid(sim_components, 0.0)
    assert np.array_equal(bg.lower, sim_components.theta) and np.array_equal(bg.upper, sim_components.theta)
    assert np.array_equal(bg.eif_lower, sim_components.eif_theta)
    assert np.array_equal(bg.eif_upper, sim_components.eif_theta)


@given(st.floats(1e-6, 10))
def test_doubling_v_scales_half_width(v):
    comp = _fake_components()
    h1 = effect_bounds(comp, v).half_width
    h2 = effect_bounds(comp, 2 * v).half_width
    assert h2 == pytest.approx(np.sqrt(2) * h1, rel=1e-14)


@given(st.floats(0, 5), st.floats(1e-6, 5))
def test_monotone_widening(v1, dv):
    comp = _fake_components()
    b1, b2 = effect_bounds(comp, v1), effect_bounds(comp, v1 + dv)
    assert b2.lower < b1.lower <= b1.theta <= b1.upper < b2.upper


def test_bounds_invariants_on_data(sim_components):
    for v in (0.0, 1e-3, 0.05):
        bg = bounds_on_grid(sim_components, v)
        assert np.all(bg.lower <= bg.theta) and np.all(bg.theta <= bg.upper)
        np.testing.assert_allclose(bg.lower, bg.theta - np.sqrt(v * bg.psi_plus * bg.tau_plus), atol=1e-15)
        assert np.all(bg.psi_plus >= 0) and bg.tau_plus >= 0


def test_degenerate_bounds_warn():
    comp = _fake_components(psi=0.0)
    with pytest.warns(DegenerateBoundsWarning):
        b = effect_bounds(comp, 0.01)
    assert b.lower == b.upper == b.theta and b.degenerate


def test_negative_v_rejected():
    with pytest.raises(ValueError):
        effect_bounds(_fake_components(), -0.1)


def test_rho_cap_scales_half_width():
    comp = _fake_components()
    assert effect_bounds(comp, 0.01, rho_cap=0.5).half_width == pytest.approx(
        0.5 * effect_bounds(comp, 0.01).half_width, rel=1e-14)


@given(st.floats(0, 0.99))
def test_v_from_q_matches_confounding_level(q):
    assert v_from_q(q) == pytest.approx(confounding_level(q, q), rel=1e-12, abs=1e-300)


# ---------------------------------------------------------------- RMST

def test_rmst_degenerate_outcome():
    n = 200
    a = np.r_[np.ones(100, int), np.zeros(100, int)]
    data = make_dataset(np.full(n, 10.0), np.ones(n, int), a)
    folds = make_folds(n, 5, 0, data)
    rc = rmst_components(data, folds, 2.0, 50, KM)
    assert rc.phi == 0.0 and rc.gamma == 0.0
    with pytest.warns(DegenerateBoundsWarning):
        b = rmst_bounds(rc, 0.1)
    assert b.lower == b.upper == 0.0


def test_rmst_grid_refinement(sim1000):
    folds = make_folds(sim1000.n, 5, 3, sim1000)
    cross = fit_cross(sim1000, folds, study_nuisance_config())
    coarse = rmst_from_fits(cross, 1.5, 100)
    fine = rmst_from_fits(cross, 1.5, 200)
    assert abs(coarse.phi - fine.phi) < 1e-3


def test_rmst_grid_too_coarse(toy):
    with pytest.raises(ValueError):
        rmst_from_fits(toy, 1.0, 10)


def test_evaluation_time_must_be_positive(toy):
    with pytest.raises(ValueError):
        components_from_fits(toy, [0.0])
