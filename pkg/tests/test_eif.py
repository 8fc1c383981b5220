import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_dataset
from survsens.data import Observation
from survsens.eif import (ClipCounter, EifContext, eif_psi, eif_rmst_terms, eif_tau, eif_theta, evaluate_terms,
                          martingale_term, martingale_value, survival_times_martingale, tau_terms)
from survsens.nuisance import KaplanMeier, NuisanceFit, StepCurves, Basis


class FixedCurves:
    """Model returning a fixed hazard row per treatment arm."""

    def __init__(self, jump_times, hazard_by_arm):
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.h = {a: np.asarray(h, dtype=float) for a, h in hazard_by_arm.items()}

    def predict(self, a, W):
        a = np.asarray(a).reshape(-1)
        return StepCurves(self.jump_times, np.array([self.h[int(x)] for x in a]).reshape(a.size, -1))


class FixedPropensity:
    eps = 0.0

    def __init__(self, p):
        self.p = p

    def predict(self, W):
        return np.full(len(W), self.p)


def nuisance(s_times, s_h, g_times=(), g_h=(), p=0.5):
    s_h = s_h if isinstance(s_h, dict) else {0: s_h, 1: s_h}
    g_h = g_h if isinstance(g_h, dict) else {0: g_h, 1: g_h}
    return NuisanceFit(FixedCurves(s_times, s_h), FixedCurves(g_times, g_h), FixedPropensity(p), Basis(), 0.0)


# ---------------------------------------------------------------- martingale term

def test_martingale_zero_without_jumps():
    assert martingale_value(3.0, 0, 2.0, [], [], [], [], 1.0, 1.0) == 0.0
    ctx = EifContext(nuisance([], []), t=2.0)
    assert martingale_term(ctx, 3.0, 0, 1, [0.0]) == 0.0


def test_martingale_one_jump_censored():
    # S and G equal one, one hazard jump of 0.5 at u = 1
    assert martingale_value(3.0, 0, 2.0, [1.0], [0.5], [1.0], [1.0], 1.0, 1.0) == -0.5


def test_martingale_event_at_jump():
    assert martingale_value(1.0, 1, 2.0, [1.0], [0.5], [0.5], [1.0], 0.5, 1.0) == pytest.approx(1.0)
    ctx = EifContext(nuisance([1.0], [0.5]), t=2.0)
    assert martingale_term(ctx, 1.0, 1, 0, [0.0]) == pytest.approx(1.0)


def test_martingale_toy_hand_value():
    ctx = EifContext(nuisance([1.0, 2.0], [0.2, 0.5], [1.5], [0.4]), t=3.0, clip_eps=0.01)
    want = 1 / (0.4 * 0.6) - (0.2 / (0.8 * 1.0) + 0.5 / (0.4 * 0.6))
    assert martingale_term(ctx, 2.0, 1, 1, [0.0]) == pytest.approx(want, abs=1e-12)


@given(st.lists(st.floats(0.0, 0.6), min_size=1, max_size=8), st.lists(st.floats(0.0, 0.5), max_size=5),
       st.floats(0.1, 10), st.integers(0, 1), st.floats(0.1, 10))
def test_vectorized_martingale_matches_explicit_sum(sh, gh, y, delta, t):
    s_times = np.arange(1, len(sh) + 1, dtype=float)
    g_times = np.arange(1, len(gh) + 1, dtype=float) + 0.5
    nf = nuisance(s_times, sh, g_times, gh)
    ctx = EifContext(nf, t=t, clip_eps=1e-6)
    S = nf.survival_curves(np.array([1]), np.zeros((1, 1)))
    G = nf.censoring_curves(np.array([1]), np.zeros((1, 1)))
    s_t, sh_t = survival_times_martingale(S, G, np.array([y]), np.array([delta]), np.array([t]), 1e-6,
                                          ClipCounter())
    h = martingale_term(ctx, y, delta, 1, [0.0])
    assert sh_t[0, 0] == pytest.approx(s_t[0, 0] * h, rel=1e-9, abs=1e-12)


def test_identity_when_censoring_absent():
    # with G = 1: -S(t) H = I(y > t) - S(t)
    rng = np.random.default_rng(0)
    h = rng.uniform(0, 0.4, 6)
    nf = nuisance(np.arange(1.0, 7.0), h)
    S = nf.survival_curves(np.ones(50, int), np.zeros((50, 1)))
    G = nf.censoring_curves(np.ones(50, int), np.zeros((50, 1)))
    y = rng.uniform(0, 8, 50)
    t = np.array([2.5, 4.0])
    s_t, sh = survival_times_martingale(S, G, y, np.ones(50, int), t, 0.01, ClipCounter())
    np.testing.assert_allclose(-sh, (y[:, None] > t) - s_t, atol=1e-12)


def test_clip_counter_records_activation():
    counter = ClipCounter()
    nf = nuisance([1.0], [0.5], [0.5], [0.999])
    ctx = EifContext(nf, t=2.0, clip_eps=0.01, counter=counter)
    martingale_term(ctx, 1.5, 0, 1, [0.0])
    assert counter.clipped >= 1 and 0 < counter.rate <= 1


# ---------------------------------------------------------------- theta

def test_theta_null_effect():
    ctx = EifContext(nuisance([5.0], [0.3]), t=2.0)
    assert eif_theta(ctx, Observation(3.0, 0, 1, (0.0,))) == 0.0


def test_theta_randomized_trial_identity():
    rng = np.random.default_rng(4)
    n = 400
    a = np.r_[np.ones(n // 2, int), np.zeros(n // 2, int)]
    y = rng.exponential(np.where(a == 1, 1.5, 1.0))
    data = make_dataset(y, np.ones(n, int), a)
    km = KaplanMeier().fit(data)
    nf = NuisanceFit(km, KaplanMeier(False).fit(data, "censoring"), FixedPropensity(0.5), Basis(), 0.0)
    t = np.array([0.5, 1.0])
    terms = evaluate_terms(nf, data.time, data.event, data.treatment, data.covariates, t, 0.01)
    ipw = np.mean((a[:, None] / 0.5 - (1 - a[:, None]) / 0.5) * (y[:, None] > t), axis=0)
    np.testing.assert_allclose(terms.theta().mean(axis=0), ipw, atol=1e-10)


# ---------------------------------------------------------------- psi

def test_psi_vanishes_when_survival_is_one():
    ctx = EifContext(nuisance([5.0], [0.3]), t=2.0)
    assert eif_psi(ctx, Observation(3.0, 0, 1, (0.0,))) == 0.0


@given(st.floats(0.01, 20), st.integers(0, 1), st.lists(st.floats(0, 0.9), max_size=4))
def test_psi_half_survival_annihilates_martingale(y, delta, gh):
    nf = nuisance([1.0], [0.5], np.arange(len(gh)) + 0.7, gh)
    ctx = EifContext(nf, t=2.0, clip_eps=0.01)
    assert eif_psi(ctx, Observation(y, delta, 1, (0.0,))) == 0.25


def test_psi_toy_hand_value():
    ctx = EifContext(nuisance([1.0, 2.0], [0.2, 0.5], [1.5], [0.4]), t=3.0)
    H = 1 / (0.4 * 0.6) - (0.2 / 0.8 + 0.5 / (0.4 * 0.6))
    want = (1 - 2 * 0.4) * 0.4 * (-H) + 0.4 * 0.6
    assert eif_psi(ctx, Observation(2.0, 1, 1, (0.0,))) == pytest.approx(want, abs=1e-12)
    assert eif_psi(ctx, Observation(2.0, 1, 1, (0.0,)), estimate=want) == pytest.approx(0, abs=1e-12)


# ---------------------------------------------------------------- tau

@pytest.mark.parametrize("pi,a,want", [(0.5, 1, 4.0), (0.2, 1, -12.5), (0.2, 0, 10.9375), (0.5, 0, 4.0)])
def test_tau_table(pi, a, want):
    assert tau_terms(a, pi) == pytest.approx(want, abs=1e-12)
    assert eif_tau(Observation(1.0, 1, a, (0.0,)), FixedPropensity(pi)) == pytest.approx(want, abs=1e-12)


def test_tau_centered_zero_in_symmetric_case():
    assert eif_tau(Observation(1.0, 1, 1, (0.0,)), FixedPropensity(0.5), estimate=4.0) == 0.0


@given(st.floats(0.01, 0.99))
def test_tau_mean_over_treatment_is_plugin(pi):
    # E[D_tau | W] = 1 / (pi (1 - pi)) at the true propensity
    mean = pi * tau_terms(1, pi) + (1 - pi) * tau_terms(0, pi)
    assert mean == pytest.approx(1 / (pi * (1 - pi)), rel=1e-10)


# ---------------------------------------------------------------- rmst

def test_rmst_terms_without_martingale():
    ctx = EifContext(nuisance([0.5, 1.5], [0.2, 0.25]), t=3.0)
    obs = Observation(5.0, 0, 1, (0.0,))
    du, duv = eif_rmst_terms(ctx, obs, 1.0, 2.0)
    # y beyond both horizons: H_u = sum of compensator terms, nonzero; compare with hand values
    s1, s2 = 0.8, 0.6
    h1 = -(0.2 / 0.8)
    h2 = -(0.2 / 0.8 + 0.25 / 0.6)
    assert du == pytest.approx(s1 * (1 - h1))
    assert duv == pytest.approx(s2 * s1 * (1 - h1 - h2))


def test_rmst_terms_constant_survival():
    ctx = EifContext(nuisance([], []), t=3.0)
    assert eif_rmst_terms(ctx, Observation(5.0, 0, 1, (0.0,)), 1.0, 2.0) == (1.0, 1.0)


def test_rmst_terms_zero_martingale_is_plugin():
    ctx = EifContext(nuisance([4.0], [0.5]), t=3.0)
    du, duv = eif_rmst_terms(ctx, Observation(5.0, 0, 1, (0.0,)), 1.0, 2.0)
    assert (du, duv) == (1.0, 1.0)


def test_context_validation():
    with pytest.raises(ValueError):
        EifContext(nuisance([], []), t=0.0)
    with pytest.raises(ValueError):
        EifContext(nuisance([], []), t=1.0, clip_eps=0.5)
