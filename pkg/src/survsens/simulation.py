"""Simulation harness: a confounded survival data-generating process with
hidden confounders, true parameter values by quadrature or Monte Carlo, and
replication studies of bias, MSE and coverage.

Hidden structure (all draws independent unless stated)::

    U1 ~ U(0, 1), U2 ~ U(-2, 2), W1 | U1 ~ Beta(2 U1, 1), W2 ~ U(0, 1)
    A | W, U ~ Bernoulli(expit(b0 + b1 W1 + b2 W2 + b3 U1 + b4 U2))
    C | A, W ~ Exp(exp(c0 + c1 A + c2 W1 + c3 W2))
    T | A, W, U ~ Exp(exp(e0 + e1 A + e2 sqrt(W1) + e3 W2 + e4 sqrt(U1) + e5 exp(-3 + U2/2)))

Quadrature works with ``s = -log W1``: given ``s`` the density of ``U1`` is
proportional to ``u1 exp(-2 s u1)`` on ``(0, 1)`` and the marginal density of
``s`` is ``(1 - exp(-2s)(1 + 2s)) / (2 s^2)``.
"""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy.special import expit

from .data import Dataset, make_folds
from .estimation import bounds_on_grid, components_from_fits, fit_cross
from .inference import pointwise_ci, uniform_band
from .nuisance import Basis, NuisanceConfig, NuisanceFit, StepCurves

logger = logging.getLogger(__name__)


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    n: int = 1000
    seed: int = 0
    propensity: tuple[float, ...] = (0.2, -0.2, 0.1, -0.55, -0.5)
    censoring: tuple[float, ...] = (-0.5, -0.15, -0.3, 0.1)
    event: tuple[float, ...] = (0.15, -0.25, -0.1, -0.2, 0.5, 1.75)

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("n must be a positive integer")
        if len(self.propensity) != 5 or len(self.censoring) != 4 or len(self.event) != 6:
            raise ValueError("coefficient vectors must have lengths 5, 4 and 6")

    def without_confounding(self) -> "DgpConfig":
        """Zero every coefficient attached to the hidden confounders."""
        p, e = list(self.propensity), list(self.event)
        p[3] = p[4] = 0.0
        e[4] = e[5] = 0.0
        return DgpConfig(self.n, self.seed, tuple(p), self.censoring, tuple(e))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def propensity_c(cfg: DgpConfig, w1, w2, u1, u2):
    b = cfg.propensity
    return expit(b[0] + b[1] * w1 + b[2] * w2 + b[3] * u1 + b[4] * u2)


def censoring_rate(cfg: DgpConfig, a, w1, w2):
    c = cfg.censoring
    return np.exp(c[0] + c[1] * a + c[2] * w1 + c[3] * w2)


def event_rate(cfg: DgpConfig, a, sqrt_w1, w2, u1, u2):
    e = cfg.event
    return np.exp(e[0] + e[1] * a + e[2] * sqrt_w1 + e[3] * w2 + e[4] * np.sqrt(u1)
                  + e[5] * np.exp(-3 + u2 / 2))


@dataclass
class SimulatedData:
    data: Dataset
    hidden: pd.DataFrame   # T, C, U1, U2 for oracle checks only


def generate(config: DgpConfig) -> SimulatedData:
    rng = np.random.default_rng(config.seed)
    n = int(config.n)
    u1 = rng.uniform(0, 1, n)
    u2 = rng.uniform(-2, 2, n)
    # W1 = V^(1/(2 U1)); work with s = -log W1 to avoid underflow
    s = -np.log(rng.uniform(0, 1, n)) / (2 * u1)
    w1 = np.exp(-s)
    w2 = rng.uniform(0, 1, n)
    a = (rng.uniform(0, 1, n) < propensity_c(config, w1, w2, u1, u2)).astype(int)
    c = rng.exponential(1 / censoring_rate(config, a, w1, w2))
    t = rng.exponential(1 / event_rate(config, a, np.exp(-s / 2), w2, u1, u2))
    y = np.minimum(t, c)
    data = Dataset(y, (t <= c).astype(int), a, np.column_stack([w1, w2]), ("W1", "W2"))
    return SimulatedData(data, pd.DataFrame({"T": t, "C": c, "U1": u1, "U2": u2}))


def censoring_probability(config: DgpConfig, t: float = 2.0) -> float:
    """Empirical ``P(C <= t)`` from one draw of ``config.n`` units."""
    return float(np.mean(generate(config).hidden["C"].to_numpy() <= t))


# ---------------------------------------------------------------------------
# quadrature


def _gl(n: int, a: float, b: float):
    x, w = leggauss(n)
    return (b - a) / 2 * x + (a + b) / 2, (b - a) / 2 * w


def s_density(s):
    """Marginal density of ``-log W1``."""
    s = np.asarray(s, dtype=float)
    num = -np.expm1(-2 * s) - 2 * s * np.exp(-2 * s)
    small = s < 1e-4
    safe = np.where(small, 1.0, s)
    return np.where(small, 1 - 4 * s / 3, num / (2 * safe ** 2))


def _u1_nodes(s: float, n: int):
    """Nodes and normalized weights for ``U1 | s`` (density ~ u1 exp(-2 s u1))."""
    rmax = math.sqrt(min(2 * s, 60.0))
    r, wr = _gl(n, 0.0, rmax)
    k = wr * r ** 3 * np.exp(-r * r)
    return r * r / (2 * s), k / k.sum()


def _u2_nodes(n: int):
    u2, w = _gl(n, -2.0, 2.0)
    return u2, w / 4


def _inner(cfg: DgpConfig, s: float, w2, times, nr: int, nu2: int):
    """Integrals over ``U`` given ``W1 = exp(-s)`` for each ``w2``."""
    u1, pr = _u1_nodes(s, nr)
    u2, pu = _u2_nodes(nu2)
    w1 = math.exp(-s)
    sw1 = math.exp(-s / 2)
    W2 = np.asarray(w2)[:, None, None]
    U1, U2 = u1[None, :, None], u2[None, None, :]
    P = pr[:, None] * pu[None, :]
    pc = propensity_c(cfg, w1, W2, U1, U2)                           # (nw2, nr, nu2)
    out = {"m1": np.einsum("ijk,jk->i", pc, P),
           "alpha2": np.einsum("ijk,jk->i", 1 / (pc * (1 - pc)), P)}
    for arm in (0, 1):
        lam = event_rate(cfg, arm, sw1, W2, U1, U2)
        S = np.exp(-lam[..., None] * times)                          # (nw2, nr, nu2, M)
        pa = pc if arm == 1 else 1 - pc
        out[f"N{arm}"] = np.einsum("ijkm,ijk,jk->im", S, pa, P)
        out[f"Q{arm}"] = np.einsum("ijkm,ijk,jk->im", S * S, pa, P)
        out[f"C{arm}"] = np.einsum("ijkm,jk->im", S, P)
    out["m0"] = 1 - out["m1"]
    return out


def _quadrature_pass(cfg: DgpConfig, times, nodes):
    nx, nw2, nr, nu2 = nodes
    times = np.asarray(times, dtype=float)
    M = times.size
    x, wx = _gl(nx, 0.0, 1.0)
    s_all = x / (1 - x)
    wxs = wx * s_density(s_all) / (1 - x) ** 2
    w2, ww2 = _gl(nw2, 0.0, 1.0)
    acc = {k: np.zeros(M) for k in ("theta_P", "theta_c", "psi", "EgP2", "Egc2", "Eg_noW2")}
    acc.update(tau=0.0, Ealpha_c2=0.0, tau_noW2=0.0, mass=0.0)
    NR = {0: np.zeros((nw2, M)), 1: np.zeros((nw2, M))}
    mR = {0: np.zeros(nw2), 1: np.zeros(nw2)}
    for s, wgt in zip(s_all, wxs):
        q = _inner(cfg, s, w2, times, nr, nu2)
        W = wgt * ww2
        SP = {arm: q[f"N{arm}"] / q[f"m{arm}"][:, None] for arm in (0, 1)}
        acc["theta_P"] += W @ (SP[1] - SP[0])
        acc["theta_c"] += W @ (q["C1"] - q["C0"])
        acc["psi"] += W @ sum(q[f"N{arm}"] * (1 - SP[arm]) for arm in (0, 1))
        acc["EgP2"] += W @ sum(q[f"N{arm}"] * SP[arm] for arm in (0, 1))
        acc["Egc2"] += W @ (q["Q0"] + q["Q1"])
        acc["tau"] += float(W @ (1 / (q["m1"] * q["m0"])))
        acc["Ealpha_c2"] += float(W @ q["alpha2"])
        acc["mass"] += float(W.sum())
        # dropping W2: integrate w2 out at this s
        m_s = {arm: float(ww2 @ q[f"m{arm}"]) for arm in (0, 1)}
        N_s = {arm: ww2 @ q[f"N{arm}"] for arm in (0, 1)}
        acc["Eg_noW2"] += wgt * sum(N_s[arm] ** 2 / m_s[arm] for arm in (0, 1))
        acc["tau_noW2"] += wgt / (m_s[1] * m_s[0])
        # dropping W1: accumulate over s for each w2
        for arm in (0, 1):
            NR[arm] += wgt * q[f"N{arm}"]
            mR[arm] += wgt * q[f"m{arm}"]
    acc["Eg_noW1"] = ww2 @ sum(NR[arm] ** 2 / mR[arm][:, None] for arm in (0, 1))
    acc["tau_noW1"] = float(ww2 @ (1 / (mR[1] * mR[0])))
    return acc


def _derived(raw: dict) -> dict:
    psi, tau = raw["psi"], raw["tau"]
    out = {"theta_c": raw["theta_c"], "theta_P": raw["theta_P"], "psi_P": psi, "tau_P": tau,
           "s_cT": (raw["Egc2"] - raw["EgP2"]) / psi, "s_cA": 1 - tau / raw["Ealpha_c2"]}
    for nm in ("W1", "W2"):
        out[f"bench_s_T_{nm}"] = (raw["EgP2"] - raw[f"Eg_no{nm}"]) / psi
        out[f"bench_s_A_{nm}"] = 1 - raw[f"tau_no{nm}"] / tau
    return out


@dataclass
class TruthTable:
    times: np.ndarray
    theta_c: np.ndarray
    theta_P: np.ndarray
    psi_P: np.ndarray
    tau_P: float
    s_cT: np.ndarray
    s_cA: float
    method: str
    errors: dict = field(default_factory=dict)
    benchmark: dict = field(default_factory=dict)

    @property
    def v(self) -> np.ndarray:
        return self.s_cT * self.s_cA / (1 - self.s_cA)

    @property
    def half_width(self) -> np.ndarray:
        return np.sqrt(np.abs(self.v) * self.psi_P * self.tau_P)

    @property
    def lower(self) -> np.ndarray:
        return self.theta_P - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return self.theta_P + self.half_width

    @property
    def rho_c(self) -> np.ndarray:
        gap = self.theta_c - self.theta_P
        with np.errstate(invalid="ignore", divide="ignore"):
            r = gap / self.half_width
        return np.where(self.half_width > 0, np.sign(r) * np.minimum(np.abs(r), 1), 0.0)

    def index(self, t) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} not in truth table")
        return int(hits[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "theta_c": self.theta_c, "theta_P": self.theta_P,
                             "psi_P": self.psi_P, "tau_P": self.tau_P, "s_cT": self.s_cT, "s_cA": self.s_cA,
                             "v": self.v, "lower": self.lower, "upper": self.upper, "rho_c": self.rho_c})

    def to_dict(self) -> dict:
        d = self.to_frame().to_dict(orient="list")
        d["method"] = self.method
        d["errors"] = {k: np.asarray(v).tolist() for k, v in self.errors.items()}
        d["benchmark"] = {k: np.asarray(v).tolist() for k, v in self.benchmark.items()}
        return d


def _table(times, vals: dict, method: str, errors: dict) -> TruthTable:
    bench = {k: v for k, v in vals.items() if k.startswith("bench_")}
    return TruthTable(np.asarray(times, dtype=float), np.asarray(vals["theta_c"]), np.asarray(vals["theta_P"]),
                      np.asarray(vals["psi_P"]), float(vals["tau_P"]), np.asarray(vals["s_cT"]),
                      float(vals["s_cA"]), method, errors, bench)


_LEVELS = [(48, 8, 24, 16), (72, 12, 36, 24), (108, 18, 54, 36), (162, 27, 81, 54)]


def quadrature_truth(times, config: DgpConfig | None = None, rtol: float = 1e-5,
                     max_evaluations: float = 1e7) -> TruthTable:
    """Tensor Gauss-Legendre integration, refined until successive levels agree
    to ``rtol`` (relative, with an absolute floor of ``rtol * 1e-2``)."""
    cfg = config or DgpConfig()
    times = np.atleast_1d(np.asarray(times, dtype=float))
    prev = None
    for nodes in _LEVELS:
        if np.prod(nodes) > max_evaluations:
            break
        cur = _derived(_quadrature_pass(cfg, times, nodes))
        if prev is not None:
            err = {k: np.abs(np.asarray(cur[k]) - np.asarray(prev[k])) for k in cur}
            ok = all(np.all(e <= rtol * np.maximum(np.abs(cur[k]), 1e-2)) for k, e in err.items())
            if ok:
                return _table(times, cur, "quadrature", err)
        prev = cur
    raise QuadratureError(f"quadrature did not reach rtol={rtol} within {max_evaluations:.0e} nodes")


# ---------------------------------------------------------------------------
# Monte Carlo


def sample_u1_given_s(s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the density proportional to ``u exp(-2 s u)`` on ``(0, 1)``."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    todo = np.arange(s.size)
    while todo.size:
        ss = s[todo]
        low = ss < 1.0
        prop = np.empty(todo.size)
        acc = np.empty(todo.size, dtype=bool)
        k = int(low.sum())
        # Beta(2, 1) proposal thinned by exp(-2 s u)
        prop[low] = np.sqrt(rng.uniform(size=k))
        acc[low] = rng.uniform(size=k) < np.exp(-2 * ss[low] * prop[low])
        # Gamma(2, rate 2s) truncated to (0, 1)
        hi = ~low
        prop[hi] = rng.gamma(2.0, 1 / (2 * ss[hi]))
        acc[hi] = prop[hi] < 1.0
        out[todo[acc]] = prop[acc]
        todo = todo[~acc]
    return out


_MC_KEYS = ("theta_P", "theta_c", "psi", "EgP2", "Egc2", "tau", "Ealpha_c2")


def _mc_functionals(cfg, s, w2, u1, u2, times):
    """Per-outer-draw functionals from inner draws; arrays (B, n_in)."""
    pc = propensity_c(cfg, np.exp(-s)[:, None], w2[:, None], u1, u2)
    m1 = pc.mean(axis=1)
    m = {1: m1, 0: 1 - m1}
    N, Q, C = {}, {}, {}
    for arm in (0, 1):
        lam = event_rate(cfg, arm, np.exp(-s / 2)[:, None], w2[:, None], u1, u2)
        S = np.exp(-lam[..., None] * times)
        pa = (pc if arm == 1 else 1 - pc)[..., None]
        N[arm] = (S * pa).mean(axis=1)
        Q[arm] = (S * S * pa).mean(axis=1)
        C[arm] = S.mean(axis=1)
    SP = {arm: N[arm] / m[arm][:, None] for arm in (0, 1)}
    return {"theta_P": SP[1] - SP[0], "theta_c": C[1] - C[0],
            "psi": sum(N[a] * (1 - SP[a]) for a in (0, 1)),
            "EgP2": sum(N[a] * SP[a] for a in (0, 1)), "Egc2": Q[0] + Q[1],
            "tau": (1 / (m[1] * m[0]))[:, None] * np.ones((1, times.size)),
            "Ealpha_c2": (1 / (pc * (1 - pc))).mean(axis=1)[:, None] * np.ones((1, times.size))}


def monte_carlo_truth(times, config: DgpConfig | None = None, draws: float = 1e7, n_inner: int = 2500,
                      seed: int = 12345, block: int = 100) -> TruthTable:
    """Nested Monte Carlo: outer draws of ``W`` from the model, inner exact
    draws of ``U | W``. Nonlinear functionals of inner means are corrected for
    their leading ``1/n_inner`` bias by split-half extrapolation. Standard
    errors use the outer-draw spread (delta method for ratios)."""
    cfg = config or DgpConfig()
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n_outer = int(math.ceil(draws / n_inner))
    rng = np.random.default_rng(seed)
    per = {k: [] for k in _MC_KEYS}
    for start in range(0, n_outer, block):
        B = min(block, n_outer - start)
        u1o = rng.uniform(size=B)
        s = -np.log(rng.uniform(size=B)) / (2 * u1o)
        w2 = rng.uniform(size=B)
        u1 = sample_u1_given_s(np.repeat(s, n_inner), rng).reshape(B, n_inner)
        u2 = rng.uniform(-2, 2, size=(B, n_inner))
        full = _mc_functionals(cfg, s, w2, u1, u2, times)
        h = n_inner // 2
        h1 = _mc_functionals(cfg, s, w2, u1[:, :h], u2[:, :h], times)
        h2 = _mc_functionals(cfg, s, w2, u1[:, h:], u2[:, h:], times)
        for k in _MC_KEYS:
            per[k].append(2 * full[k] - (h1[k] + h2[k]) / 2)
    per = {k: np.vstack(v) for k, v in per.items()}
    mean = {k: v.mean(axis=0) for k, v in per.items()}
    se = {k: v.std(axis=0, ddof=1) / math.sqrt(n_outer) for k, v in per.items()}
    psi, tau = mean["psi"], mean["tau"][0]
    s_cT = (mean["Egc2"] - mean["EgP2"]) / psi
    infl_T = ((per["Egc2"] - per["EgP2"]) - s_cT * per["psi"]) / psi
    s_cA = 1 - tau / mean["Ealpha_c2"][0]
    infl_A = -(per["tau"][:, 0] - (1 - s_cA) * per["Ealpha_c2"][:, 0]) / mean["Ealpha_c2"][0]
    vals = {"theta_c": mean["theta_c"], "theta_P": mean["theta_P"], "psi_P": psi, "tau_P": tau,
            "s_cT": s_cT, "s_cA": s_cA}
    errors = {"theta_c": se["theta_c"], "theta_P": se["theta_P"], "psi_P": se["psi"], "tau_P": se["tau"][0],
              "s_cT": infl_T.std(axis=0, ddof=1) / math.sqrt(n_outer),
              "s_cA": infl_A.std(ddof=1) / math.sqrt(n_outer)}
    return _table(times, vals, "monte-carlo", errors)


def compute_truth(t_values, method: str = "quadrature", config: DgpConfig | None = None, **kwargs) -> TruthTable:
    """True parameter values at ``t_values`` by ``"quadrature"`` or ``"monte-carlo"``.
    Quadrature that misses its tolerance falls back to Monte Carlo."""
    if np.any(np.asarray(t_values, dtype=float) <= 0):
        raise ValueError("t_values must be positive")
    if method == "quadrature":
        try:
            return quadrature_truth(t_values, config, **kwargs)
        except QuadratureError as exc:
            warnings.warn(f"{exc}; falling back to Monte Carlo", RuntimeWarning, stacklevel=2)
            return monte_carlo_truth(t_values, config)
    if method == "monte-carlo":
        return monte_carlo_truth(t_values, config, **kwargs)
    raise ValueError("method must be 'quadrature' or 'monte-carlo'")


# ---------------------------------------------------------------------------
# true nuisance functions


class ExponentialCurves:
    """Row-wise exponential survival ``exp(-rate t)`` with the evaluation
    methods the influence-function code needs."""

    def __init__(self, rate):
        self.rate = np.asarray(rate, dtype=float).reshape(-1)
        self.jump_times = np.zeros(0)

    @property
    def n(self) -> int:
        return self.rate.size

    def survival(self, t):
        return np.exp(-np.outer(self.rate, np.atleast_1d(t)))

    survival_left = survival

    def survival_at(self, t_row, left=False):
        return np.exp(-self.rate * np.asarray(t_row, dtype=float))


class _OracleBase:
    def __init__(self, cfg: DgpConfig, nr: int = 16, nu2: int = 12):
        self.cfg, self.nr, self.nu2 = cfg, nr, nu2

    def fit(self, data=None, target=None):
        return self

    def _weights(self, a, W):
        """Per-row inner nodes ``(u1, u2)`` and weights proportional to
        ``p(u | w) P(A = a | w, u)``; shapes ``(n, nr*nu2)``."""
        W = np.asarray(W, dtype=float).reshape(-1, 2)
        s = -np.log(np.maximum(W[:, 0], 1e-300))
        u2, pu = _u2_nodes(self.nu2)
        U1, P = [], []
        for si in s:
            u1, pr = _u1_nodes(max(si, 1e-12), self.nr)
            U1.append(np.repeat(u1, self.nu2))
            P.append(np.outer(pr, pu).ravel())
        U1, P = np.array(U1), np.array(P)
        U2 = np.tile(u2, self.nr)[None, :]
        pc = propensity_c(self.cfg, W[:, :1], W[:, 1:], U1, U2)
        if a is not None:
            a = np.asarray(a).reshape(-1, 1)
            P = P * np.where(a == 1, pc, 1 - pc)
        return W, s, U1, U2, P, pc


class OracleSurvival(_OracleBase):
    """``S_P(t | a, w)`` as step curves on ``jump_times``."""

    def __init__(self, cfg: DgpConfig, jump_times, **kw):
        super().__init__(cfg, **kw)
        self.jump_times = np.asarray(jump_times, dtype=float)

    def survival(self, a, W) -> np.ndarray:
        W, s, U1, U2, P, _ = self._weights(a, W)
        a = np.asarray(a).reshape(-1, 1)
        lam = event_rate(self.cfg, a, np.exp(-s / 2)[:, None], W[:, 1:], U1, U2)
        P = P / P.sum(axis=1, keepdims=True)
        out = np.empty((W.shape[0], self.jump_times.size))
        for lo in range(0, W.shape[0], 64):
            sl = slice(lo, lo + 64)
            out[sl] = np.einsum("ikm,ik->im", np.exp(-lam[sl, :, None] * self.jump_times), P[sl])
        return out

    def predict(self, a, W) -> StepCurves:
        S = np.minimum.accumulate(self.survival(a, W), axis=1)
        prev = np.hstack([np.ones((S.shape[0], 1)), S[:, :-1]])
        with np.errstate(invalid="ignore", divide="ignore"):
            h = np.where(prev > 0, 1 - S / prev, 1.0)
        return StepCurves(self.jump_times, h)


class OracleCensoring(_OracleBase):
    def predict(self, a, W) -> ExponentialCurves:
        W = np.asarray(W, dtype=float).reshape(-1, 2)
        return ExponentialCurves(censoring_rate(self.cfg, np.asarray(a).reshape(-1), W[:, 0], W[:, 1]))


class OraclePropensity(_OracleBase):
    eps = 0.0

    def predict(self, W) -> np.ndarray:
        *_, P, pc = self._weights(None, W)
        return np.sum(P * pc, axis=1)

    def predict_pair(self, W):
        *_, P, pc = self._weights(None, W)
        return np.sum(P * pc, axis=1), np.sum(P * (1 - pc), axis=1)


def oracle_nuisance(config: DgpConfig | None = None, t_max: float = 2.0, step: float = 0.01) -> NuisanceFit:
    """True ``S``, ``G`` and ``pi``; ``S`` is tabulated on a grid of width ``step``."""
    cfg = config or DgpConfig()
    grid = np.round(np.arange(1, int(round(t_max / step)) + 1) * step, 12)
    return NuisanceFit(OracleSurvival(cfg, grid), OracleCensoring(cfg), OraclePropensity(cfg), Basis(), 0.0)


# ---------------------------------------------------------------------------
# replication studies


def study_nuisance_config() -> NuisanceConfig:
    return NuisanceConfig(survival="cox", censoring="cox", basis=Basis(sqrt=("W1",)))


@dataclass
class StudyConfig:
    sizes: tuple[int, ...] = (500, 1000)
    replications: int = 200
    t_values: tuple[float, ...] = (1.0, 1.5, 2.0)
    coverage_times: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    band_grid: tuple[float, ...] = tuple(np.round(np.arange(1, 21) * 0.1, 10))
    alpha: float = 0.05
    folds: int = 5
    n_paths: int = 2000
    master_seed: int = 20240601
    workers: int = 1
    nuisance: NuisanceConfig = field(default_factory=study_nuisance_config)
    dgp: DgpConfig = field(default_factory=DgpConfig)

    def __post_init__(self):
        if self.replications < 50:
            raise ValueError("replications must be at least 50")
        if any(int(n) < 2 * self.folds for n in self.sizes):
            raise ValueError("every sample size must allow the requested folds")

    @property
    def all_times(self) -> np.ndarray:
        return np.unique(np.round(np.r_[self.t_values, self.coverage_times, self.band_grid], 10))

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "replications": self.replications, "t_values": list(self.t_values),
                "coverage_times": list(self.coverage_times), "band_grid": list(self.band_grid),
                "alpha": self.alpha, "folds": self.folds, "n_paths": self.n_paths,
                "master_seed": self.master_seed, "nuisance": self.nuisance.to_dict(), "dgp": self.dgp.to_dict()}


def replication_seed(master: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([master, n, rep]).generate_state(1)[0])


def _replicate(args):
    cfg, n, rep, truth = args
    seed = replication_seed(cfg.master_seed, n, rep)
    try:
        sim = generate(DgpConfig(n, seed, cfg.dgp.propensity, cfg.dgp.censoring, cfg.dgp.event))
        data = sim.data
        folds = make_folds(n, cfg.folds, seed, data)
        cross = fit_cross(data, folds, cfg.nuisance)
        times = cfg.all_times
        comp = components_from_fits(cross, times)
        idx = [truth.index(t) for t in times]
        v = truth.v[idx]
        bg = bounds_on_grid(comp, v)
        out = {"lower": bg.lower.copy(), "upper": bg.upper.copy(), "times": times}
        t_lo, t_up = truth.lower[idx], truth.upper[idx]
        for name, tr in (("plain", False), ("transformed", True)):
            cover = np.full(times.size, np.nan)
            for t in cfg.coverage_times:
                j = int(np.flatnonzero(np.isclose(times, t))[0])
                ci = pointwise_ci(bg[j], cfg.alpha, transformed=tr)
                cover[j] = float(ci.lower_limit <= t_lo[j] and t_up[j] <= ci.upper_limit)
            out[f"ci_{name}"] = cover
            band_idx = [int(np.flatnonzero(np.isclose(times, t))[0]) for t in cfg.band_grid]
            sub = bounds_on_grid(comp.select(times[band_idx]), v[band_idx])
            band = uniform_band(sub, cfg.alpha, cfg.n_paths, seed, transformed=tr)
            out[f"band_{name}"] = float(band.contains(t_lo[band_idx], t_up[band_idx]))
        return out
    except Exception as exc:  # a failed replication is skipped and counted
        return {"error": f"{type(exc).__name__}: {exc}"}


@dataclass
class StudyReport:
    table: pd.DataFrame
    truth: TruthTable
    config: StudyConfig
    failures: dict
    runtime: float

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.table.to_csv(out / "study.csv", index=False, float_format="%.10g")
        (out / "study.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False))

    def to_dict(self) -> dict:
        rows = self.table.astype(object).where(pd.notna(self.table), None).to_dict(orient="records")
        return {"config": self.config.to_dict(), "truth": self.truth.to_dict(), "failures": self.failures,
                "metrics": rows, "runtime_seconds": round(self.runtime, 3)}

    def metric(self, n: int, metric: str, t: float | None = None) -> tuple[float, float]:
        df = self.table
        sel = (df["n"] == n) & (df["metric"] == metric)
        sel &= df["t"].isna() if t is None else np.isclose(df["t"], t)
        row = df[sel]
        if row.empty:
            raise KeyError((n, metric, t))
        return float(row["value"].iloc[0]), float(row["mc_se"].iloc[0])


def run_study(config: StudyConfig | None = None, truth: TruthTable | None = None) -> StudyReport:
    """Replicate estimation at each sample size and summarize bias, MSE and coverage."""
    cfg = config or StudyConfig()
    start = time.perf_counter()
    times = cfg.all_times
    truth = truth or compute_truth(times, "quadrature", cfg.dgp)
    rows, failures = [], {}
    for n in cfg.sizes:
        jobs = [(cfg, n, rep, truth) for rep in range(cfg.replications)]
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_replicate, jobs, chunksize=4))
        else:
            results = [_replicate(j) for j in jobs]
        ok = [r for r in results if "error" not in r]
        failures[str(n)] = {"count": len(results) - len(ok),
                            "messages": sorted({r["error"] for r in results if "error" in r})[:5]}
        if not ok:
            continue
        R = len(ok)
        lower = np.array([r["lower"] for r in ok])
        upper = np.array([r["upper"] for r in ok])
        idx = {t: truth.index(t) for t in times}
        for j, t in enumerate(times):
            for name, est, tv in (("lower", lower[:, j], truth.lower[idx[t]]),
                                  ("upper", upper[:, j], truth.upper[idx[t]])):
                err = est - tv
                rows.append((n, t, f"sqrt_n_bias_{name}", math.sqrt(n) * err.mean(),
                             math.sqrt(n) * err.std(ddof=1) / math.sqrt(R)))
                rows.append((n, t, f"n_mse_{name}", n * np.mean(err ** 2),
                             n * np.std(err ** 2, ddof=1) / math.sqrt(R)))
            for name in ("plain", "transformed"):
                cov = np.array([r[f"ci_{name}"][j] for r in ok])
                if np.all(np.isnan(cov)):
                    continue
                p = float(np.mean(cov))
                rows.append((n, t, f"ci_coverage_{name}", p, math.sqrt(p * (1 - p) / R)))
        for name in ("plain", "transformed"):
            p = float(np.mean([r[f"band_{name}"] for r in ok]))
            rows.append((n, np.nan, f"band_coverage_{name}", p, math.sqrt(p * (1 - p) / R)))
        rows.append((n, np.nan, "replications", float(R), 0.0))
    table = pd.DataFrame(rows, columns=["n", "t", "metric", "value", "mc_se"])
    return StudyReport(table, truth, cfg, failures, time.perf_counter() - start)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def study_checks(report: StudyReport, bias_times: Sequence[float] = (1.0, 1.5, 2.0),
                 coverage_n: int | None = None, pointwise_tol: float = 0.031, band_min: float = 0.92,
                 transformed_band_min: float = 0.95 - 0.031) -> list[Check]:
    """Pass/fail summary against the bias, MSE and coverage thresholds."""
    cfg = report.config
    checks = []
    z = 1.959963984540054
    for n in cfg.sizes:
        for t in bias_times:
            for side in ("lower", "upper"):
                b, se = report.metric(n, f"sqrt_n_bias_{side}", t)
                checks.append(Check(f"bias n={n} t={t:g} {side}", abs(b) <= z * se,
                                    f"sqrt(n)*bias={b:.4f} +- {z * se:.4f}"))
    if len(cfg.sizes) >= 2:
        n_small, n_big = sorted(cfg.sizes)[:2]
        for t in bias_times:
            for side in ("lower", "upper"):
                r = report.metric(n_big, f"n_mse_{side}", t)[0] / report.metric(n_small, f"n_mse_{side}", t)[0]
                checks.append(Check(f"nMSE ratio {n_big}/{n_small} t={t:g} {side}", 0.5 <= r <= 2,
                                    f"ratio={r:.3f}"))
    n_cov = coverage_n or max(cfg.sizes)
    for t in cfg.coverage_times:
        for name in ("plain", "transformed"):
            p, _ = report.metric(n_cov, f"ci_coverage_{name}", t)
            checks.append(Check(f"pointwise {name} coverage n={n_cov} t={t:g}",
                                abs(p - (1 - cfg.alpha)) <= pointwise_tol, f"coverage={p:.3f}"))
    p, _ = report.metric(n_cov, "band_coverage_plain")
    checks.append(Check(f"equi-width band coverage n={n_cov}", p >= band_min, f"coverage={p:.3f}"))
    p, _ = report.metric(n_cov, "band_coverage_transformed")
    checks.append(Check(f"transformed band coverage n={n_cov}", p >= transformed_band_min, f"coverage={p:.3f}"))
    return checks
