"""Influence-function terms for the survival difference, its residual variance
functional, the treatment-precision functional and the RMST components.

The workhorse is :func:`evaluate_terms`, which for a batch of observations and
a grid of horizons returns the fitted survival at each horizon together with
the product ``S(t | a, w) * H_t(y, delta, a, w)`` of survival and martingale
term. Working with that product avoids dividing by fitted survival values
near zero: ``S(t)/S(u)`` is a product of ``1 - dL`` over ``(u, t]`` and is
computed from cumulative log-hazards. Only the censoring survival remains in
a denominator, where it is floored at ``clip_eps``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Observation
from .nuisance import NuisanceFit, StepCurves

TARGETS = ("theta", "psi", "tau", "phi", "gamma")

# log-survival below this is treated as numerically zero survival
_LOG_FLOOR = -600.0


@dataclass
class ClipCounter:
    """Counts denominator evaluations and how many of them hit the floor."""

    evaluated: int = 0
    clipped: int = 0

    def add(self, values: np.ndarray, eps: float) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        low = values < eps
        self.evaluated += values.size
        self.clipped += int(low.sum())
        return np.where(low, eps, values)

    def merge(self, other: "ClipCounter") -> None:
        self.evaluated += other.evaluated
        self.clipped += other.clipped

    @property
    def rate(self) -> float:
        return self.clipped / self.evaluated if self.evaluated else 0.0


@dataclass
class EifContext:
    nuisance: NuisanceFit
    t: float
    clip_eps: float = 0.01
    counter: ClipCounter = field(default_factory=ClipCounter)

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")
        if not 0 < self.clip_eps < 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5)")


@dataclass(frozen=True)
class EifVector:
    values: np.ndarray
    centered: bool
    target: str

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("influence function values must be finite")

    def center(self, estimate: float) -> "EifVector":
        if self.centered:
            return self
        return EifVector(self.values - estimate, True, self.target)

    def mean(self) -> float:
        return float(np.mean(self.values))


# ---------------------------------------------------------------------------
# vectorized core


def _prepared(curves: StepCurves):
    full = curves.hazard >= 1.0
    log_s = np.maximum(curves.log_surv, _LOG_FLOOR)
    return log_s, curves.n_full, full


def survival_times_martingale(S: StepCurves, G: StepCurves, y, delta, times,
                              clip_eps: float = 0.01, counter: ClipCounter | None = None):
    """Return ``(S_t, SH_t)`` with shape ``(n, len(times))``.

    ``S_t[i, m] = S(times[m] | a_i, w_i)`` and ``SH_t[i, m]`` is ``S_t`` times
    the martingale term ``H`` at horizon ``times[m]``. ``S`` and ``G`` hold
    the row-wise event and censoring survival curves; ``G`` is evaluated as a
    left limit.
    """
    counter = counter if counter is not None else ClipCounter()
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n, J = S.hazard.shape
    M = times.size
    if J == 0:
        return np.ones((n, M)), np.zeros((n, M))
    log_s, n_full, _ = _prepared(S)
    h = S.hazard
    g_jump = counter.add(G.survival_left(S.jump_times), clip_eps)
    g_y = counter.add(G.survival_at(y, left=True), clip_eps)

    # segmented cumulative sum of h exp(-L) / G, restarted after each full jump
    contrib = np.where(h >= 1.0, 1.0, h) * np.exp(-log_s) / g_jump
    csum = np.cumsum(contrib, axis=1)
    # segments are maximal runs with equal full-jump counts
    before = np.zeros((n, J))
    before[:, 1:] = csum[:, :-1]
    new_seg = np.ones((n, J), dtype=bool)
    new_seg[:, 1:] = n_full[:, 1:] != n_full[:, :-1]
    start = np.maximum.accumulate(np.where(new_seg, np.arange(J)[None, :], 0), axis=1)
    cseg = csum - np.take_along_axis(before, start, axis=1)

    kt = np.searchsorted(S.jump_times, times, side="right") - 1           # (M,)
    ky = np.searchsorted(S.jump_times, y, side="right") - 1               # (n,)
    KT = np.broadcast_to(kt[None, :], (n, M))
    m = np.minimum(KT, ky[:, None])

    def take(arr, k):
        return np.take_along_axis(arr, np.maximum(k, 0), axis=1)

    L_t = np.where(KT >= 0, take(log_s, KT), 0.0)
    Z_t = np.where(KT >= 0, take(n_full, KT), 0)
    S_t = np.where(Z_t == 0, np.exp(L_t), 0.0)
    S_t = np.where(L_t <= _LOG_FLOOR, 0.0, S_t)

    # compensator part: S(t) sum_{u_j <= t ^ y} dL(u_j) / (S(u_j) G(u_j))
    same = take(n_full, m) == Z_t
    comp = np.where((m >= 0) & same, np.exp(L_t) * take(cseg, m), 0.0)

    # jump part: I(y <= t, delta = 1) S(t) / (S(y) G(y))
    event = (delta[:, None] == 1) & (y[:, None] <= times[None, :])
    ky_b = np.broadcast_to(ky[:, None], (n, M))
    L_y = np.where(ky_b >= 0, take(log_s, ky_b), 0.0)
    Z_y = np.where(ky_b >= 0, take(n_full, ky_b), 0)
    ratio = np.where(Z_y == Z_t, np.exp(np.minimum(L_t - L_y, 0.0)), 0.0)
    jump = np.where(event, ratio / g_y[:, None], 0.0)
    return S_t, jump - comp


@dataclass
class Terms:
    """Row-wise nuisance evaluations on a horizon grid."""

    times: np.ndarray
    S: np.ndarray        # S(t | A_i, W_i), shape (n, M)
    SH: np.ndarray       # S(t | A_i, W_i) * H_t(O_i), shape (n, M)
    S1: np.ndarray       # S(t | 1, W_i)
    S0: np.ndarray       # S(t | 0, W_i)
    pi: np.ndarray       # clipped propensity, shape (n,)
    pi_c: np.ndarray     # clipped 1 - propensity
    a: np.ndarray
    counter: ClipCounter

    @property
    def alpha(self) -> np.ndarray:
        return self.a / self.pi - (1 - self.a) / self.pi_c

    def theta(self) -> np.ndarray:
        """Uncentered survival-difference influence terms, shape (n, M)."""
        return -self.alpha[:, None] * self.SH + self.S1 - self.S0

    def psi(self) -> np.ndarray:
        return -(1 - 2 * self.S) * self.SH + self.S * (1 - self.S)

    def tau(self) -> np.ndarray:
        return tau_terms(self.a, self.pi, self.pi_c)

    def theta_plugin(self) -> np.ndarray:
        return self.S1 - self.S0

    def psi_plugin(self) -> np.ndarray:
        return self.S * (1 - self.S)

    def tau_plugin(self) -> np.ndarray:
        return 1.0 / (self.pi * self.pi_c)


def evaluate_terms(nuisance: NuisanceFit, y, delta, a, W, times, clip_eps: float = 0.01) -> Terms:
    a = np.asarray(a).reshape(-1)
    n = a.size
    W = np.asarray(W, dtype=float).reshape(n, -1)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    counter = ClipCounter()
    s1 = nuisance.survival_curves(np.ones(n, dtype=int), W)
    s0 = nuisance.survival_curves(np.zeros(n, dtype=int), W)
    if not np.array_equal(s1.jump_times, s0.jump_times):
        raise ValueError("survival model must share jump times across treatment arms")
    s_obs = StepCurves(s1.jump_times, np.where(a[:, None] == 1, s1.hazard, s0.hazard))
    g_obs = nuisance.censoring_curves(a, W)
    S, SH = survival_times_martingale(s_obs, g_obs, y, delta, times, clip_eps, counter)
    pi, pi_c = (np.asarray(x, dtype=float).reshape(n) for x in nuisance.propensity_pair(W))
    return Terms(times, S, SH, s1.survival(times), s0.survival(times), pi, pi_c, a, counter)


def tau_terms(a, pi, pi_c=None) -> np.ndarray:
    """Uncentered ``2/(pi(1-pi)) - (a-pi)^2/(pi^2 (1-pi)^2)``.

    For binary ``a`` the second term is ``1/pi^2`` (treated) or ``1/(1-pi)^2``
    (control); that form is used so relabelling the arms is exact.
    """
    a = np.asarray(a, dtype=float)
    pi = np.asarray(pi, dtype=float)
    pi_c = 1 - pi if pi_c is None else np.asarray(pi_c, dtype=float)
    binary = np.isin(a, (0.0, 1.0))
    second = np.where(binary, np.where(a == 1, 1 / pi ** 2, 1 / pi_c ** 2),
                      (a - pi) ** 2 / (pi * pi_c) ** 2)
    return 2.0 / (pi * pi_c) - second


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    d = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def rmst_terms(terms: Terms, weights: np.ndarray) -> dict[str, np.ndarray]:
    """Row-wise RMST influence pieces from terms evaluated on an integration grid.

    Returns uncentered ``phi`` (integral of the survival-difference terms),
    ``gamma`` (one-step terms for the RMST residual-variance functional) and
    its plug-in ``gamma_plugin``.
    """
    u = terms.times
    w = np.asarray(weights, dtype=float)
    S, SH = terms.S, terms.SH
    int_s = S @ w
    int_sh = SH @ w
    first = (S - SH) @ (w * 2 * u)
    second = int_s ** 2 - 2 * int_s * int_sh
    return {"phi": terms.theta() @ w,
            "gamma": first - second,
            "gamma_plugin": (S @ (w * 2 * u)) - int_s ** 2}


# ---------------------------------------------------------------------------
# per-observation interface


def _single(ctx: EifContext, obs: Observation, times):
    terms = evaluate_terms(ctx.nuisance, [obs.y], [obs.delta], [obs.a], [obs.w], times, ctx.clip_eps)
    ctx.counter.merge(terms.counter)
    return terms


def martingale_value(y: float, delta: int, t: float, jump_times, d_lambda, s_jump, g_jump,
                     s_y: float, g_y: float, clip_eps: float = 0.01,
                     counter: ClipCounter | None = None) -> float:
    """``H`` from explicit ingredients: hazard increments ``d_lambda`` at
    ``jump_times`` with ``S`` and ``G`` evaluated there and at ``y``.
    Denominators are floored at ``clip_eps``."""
    counter = counter if counter is not None else ClipCounter()
    u = np.asarray(jump_times, dtype=float)
    sel = u <= min(t, y)
    s_u = counter.add(np.asarray(s_jump, dtype=float)[sel], clip_eps)
    g_u = counter.add(np.asarray(g_jump, dtype=float)[sel], clip_eps)
    comp = float(np.sum(np.asarray(d_lambda, dtype=float)[sel] / (s_u * g_u)))
    if delta == 1 and y <= t:
        s_y, g_y = counter.add(np.array([s_y, g_y]), clip_eps)
        return 1.0 / (s_y * g_y) - comp
    return -comp


def martingale_term(ctx: EifContext, y: float, delta: int, a: int, w) -> float:
    """``H`` at horizon ``ctx.t`` for one observation, with both ``S`` and ``G``
    floored at ``ctx.clip_eps`` in the denominators."""
    W = np.asarray(w, dtype=float).reshape(1, -1)
    S = ctx.nuisance.survival_curves(np.array([a]), W)
    G = ctx.nuisance.censoring_curves(np.array([a]), W)
    u = S.jump_times
    return martingale_value(y, delta, ctx.t, u, S.hazard[0], S.survival(u)[0], G.survival_left(u)[0],
                            S.survival_at([y])[0], G.survival_at([y], left=True)[0],
                            ctx.clip_eps, ctx.counter)


def eif_theta(ctx: EifContext, obs: Observation, plug_in: float = 0.0) -> float:
    return float(_single(ctx, obs, ctx.t).theta()[0, 0] - plug_in)


def eif_psi(ctx: EifContext, obs: Observation, estimate: float | None = None) -> float:
    val = float(_single(ctx, obs, ctx.t).psi()[0, 0])
    return val if estimate is None else val - estimate


def eif_tau(obs: Observation, propensity_model, estimate: float | None = None) -> float:
    W = np.asarray(obs.w, dtype=float).reshape(1, -1)
    if hasattr(propensity_model, "predict_pair"):
        pi, pi_c = (float(np.ravel(x)[0]) for x in propensity_model.predict_pair(W))
    else:
        pi = float(np.ravel(propensity_model.predict(W))[0])
        pi_c = 1 - pi
    val = float(tau_terms(obs.a, pi, pi_c))
    return val if estimate is None else val - estimate


def eif_rmst_terms(ctx: EifContext, obs: Observation, u: float, v: float) -> tuple[float, float]:
    """Uncentered ``(D_u, D_uv)`` for one observation."""
    terms = _single(ctx, obs, [u, v])
    S, SH = terms.S[0], terms.SH[0]
    d_u = S[0] - SH[0]
    d_uv = S[0] * S[1] - S[1] * SH[0] - S[0] * SH[1]
    return float(d_u), float(d_uv)
