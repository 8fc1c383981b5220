"""Pointwise intervals, uniform bands and the uniform test for effect bounds."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .estimation import BoundsEstimate, BoundsGrid, CrossFit, components_from_fits


class CovarianceError(ValueError):
    pass


class GridError(ValueError):
    pass


_SQRT2 = math.sqrt(2.0)


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def _Phi(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def _adaptive_simpson(f, a: float, b: float, tol: float, max_depth: int = 50) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6 * (fa + 4 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = (a + b) / 2
        lm, rm = (a + m) / 2, (m + b) / 2
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15
        return (rec(a, m, fa, flm, fm, left, tol / 2, depth - 1)
                + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1))

    if b <= a:
        return 0.0
    fa, fm, fb = f(a), f((a + b) / 2), f(b)
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def rect_probability(c: float, sd_l: float, sd_u: float, cov: float, tol: float = 1e-10) -> float:
    """``P(Z1 <= c, Z2 >= -c)`` for a centered bivariate normal.

    Integrates ``phi(x) Phi((c + rho sd_u x) / (sd_u sqrt(1 - rho^2)))`` over
    ``x <= c / sd_l``; perfectly correlated and zero-variance cases are
    handled in closed form.
    """
    if sd_l <= 0 and sd_u <= 0:
        return 1.0 if c >= 0 else 0.0
    if sd_l <= 0:
        return _Phi(c / sd_u) if c >= 0 else 0.0
    if sd_u <= 0:
        return _Phi(c / sd_l) if c >= 0 else 0.0
    rho = max(-1.0, min(1.0, cov / (sd_l * sd_u)))
    resid = 1 - rho * rho
    if resid < 1e-14:
        if rho > 0:
            return max(0.0, _Phi(c / sd_l) - _Phi(-c / sd_u))
        return _Phi(min(c / sd_l, c / sd_u))
    s = sd_u * math.sqrt(resid)
    # phi is negligible outside [-10, 10]; unit pieces keep Simpson from missing the mass
    upper = min(c / sd_l, 10.0)
    lower = -10.0
    if upper <= lower:
        return 0.0
    cuts = np.append(np.arange(lower, upper, 1.0), upper)
    f = lambda x: _phi(x) * _Phi((c + rho * sd_u * x) / s)  # noqa: E731
    total = sum(_adaptive_simpson(f, a, b, tol / cuts.size) for a, b in zip(cuts[:-1], cuts[1:]))
    return min(1.0, total)


def bivariate_rect_quantile(sd_l: float, sd_u: float, cov: float, alpha: float = 0.05,
                            tol: float = 1e-8) -> float:
    """Smallest ``c`` with ``P(Z1 <= c, Z2 >= -c) = 1 - alpha``, by bisection."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if sd_l < 0 or sd_u < 0 or not (math.isfinite(sd_l) and math.isfinite(sd_u) and math.isfinite(cov)):
        raise CovarianceError("standard deviations must be finite and nonnegative")
    if abs(cov) > sd_l * sd_u * (1 + 1e-9) + 1e-300:
        raise CovarianceError(f"|cov|={abs(cov):.3g} exceeds sd_l*sd_u={sd_l * sd_u:.3g}")
    target = 1 - alpha
    lo, hi = 0.0, 10.0 * max(sd_l, sd_u)
    if hi == 0:
        return 0.0
    p_lo, p_hi = rect_probability(lo, sd_l, sd_u, cov), rect_probability(hi, sd_l, sd_u, cov)
    if not (p_lo <= target <= p_hi):
        raise ValueError("critical value not bracketed in [0, 10 max(sd)]")
    for _ in range(200):
        mid = (lo + hi) / 2
        p = rect_probability(mid, sd_l, sd_u, cov)
        if abs(p - target) < tol * 1e-2 or hi - lo < 1e-13 * max(1.0, hi):
            return mid
        if p < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


# ---------------------------------------------------------------------------
# transformation to the real line


def g(x):
    """``log((1 + x) / (1 - x))``."""
    return 2 * np.arctanh(x)


_BELOW_ONE = float(np.nextafter(1.0, 0.0))


def g_inv(y):
    """Inverse of ``g``; kept inside the open interval even where tanh rounds to +-1."""
    return np.clip(np.tanh(np.asarray(y) / 2), -_BELOW_ONE, _BELOW_ONE)


def g_prime(x):
    return 2 / (1 - np.asarray(x) ** 2)


def _clamp_unit(x, what="bound"):
    x = np.asarray(x, dtype=float)
    lim = 1 - 1e-10
    if np.any(np.abs(x) > lim):
        warnings.warn(f"{what} at +-1; clamped to +-(1 - 1e-10) for the transformed scale",
                      RuntimeWarning, stacklevel=3)
    return np.clip(x, -lim, lim)


# ---------------------------------------------------------------------------
# pointwise intervals


@dataclass
class PointwiseCI:
    t: float
    v: float
    alpha: float
    lower_limit: float
    upper_limit: float
    critical: float
    transformed: bool
    lower: float
    upper: float
    method: str = "joint"

    def contains(self, x: float) -> bool:
        return self.lower_limit <= x <= self.upper_limit

    def to_dict(self) -> dict:
        return {"t": self.t, "v": self.v, "alpha": self.alpha, "lower_limit": self.lower_limit,
                "upper_limit": self.upper_limit, "critical": self.critical, "transformed": self.transformed,
                "method": self.method}


def pointwise_ci(bounds: BoundsEstimate, alpha: float = 0.05, transformed: bool = False,
                 conservative: bool = False) -> PointwiseCI:
    """Joint-coverage interval for ``[lower, upper]`` at one time.

    With ``conservative=True`` the covariance between the two bound
    estimators is ignored and each side uses the normal quantile
    ``z_{1-alpha/2}``.
    """
    rn = math.sqrt(bounds.n)
    sd_l, sd_u = math.sqrt(max(bounds.var_lower, 0.0)), math.sqrt(max(bounds.var_upper, 0.0))
    cov = bounds.cov_ul
    lo_b, up_b = bounds.lower, bounds.upper
    if transformed:
        lo_b, up_b = (float(x) for x in _clamp_unit([lo_b, up_b]))
        gl, gu = float(g_prime(lo_b)), float(g_prime(up_b))
        sd_l, sd_u, cov = gl * sd_l, gu * sd_u, gl * gu * cov
    if conservative:
        z = float(norm.ppf(1 - alpha / 2))
        crit_l, crit_u, crit = z * sd_l, z * sd_u, z
        method = "conservative"
    else:
        cov = float(np.clip(cov, -sd_l * sd_u, sd_l * sd_u))
        crit = crit_l = crit_u = bivariate_rect_quantile(sd_l, sd_u, cov, alpha)
        method = "joint"
    if transformed:
        lower_limit = float(g_inv(g(lo_b) - crit_l / rn))
        upper_limit = float(g_inv(g(up_b) + crit_u / rn))
    else:
        lower_limit = bounds.lower - crit_l / rn
        upper_limit = bounds.upper + crit_u / rn
    return PointwiseCI(bounds.t, bounds.v, alpha, lower_limit, upper_limit, crit, transformed,
                       bounds.lower, bounds.upper, method)


# ---------------------------------------------------------------------------
# uniform bands and test


def _check_grid(bg: BoundsGrid) -> None:
    if np.any(np.diff(bg.times) <= 0):
        raise GridError("band grid must be strictly increasing")
    bad = np.flatnonzero(bg.psi_plus <= 0)
    if bad.size:
        raise GridError(f"psi_plus is zero at grid time t={bg.times[bad[0]]:g}; shrink [t0, t1]")


def jittered_cholesky(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``cov + j I`` for the smallest working jitter
    ``j`` in ``{0, 1e-12, 1e-11, ..., 1e-6} * trace``."""
    cov = (cov + cov.T) / 2
    tr = float(np.trace(cov)) or 1.0
    jitters = [0.0] + [tr * 10.0 ** k for k in range(-12, -5)]
    for j in jitters:
        try:
            return linalg.cholesky(cov + j * np.eye(cov.shape[0]), lower=True), j
        except linalg.LinAlgError:
            continue
    cond = np.linalg.cond(cov)
    raise CovarianceError(f"covariance not positive definite after jitter 1e-6*trace (condition number {cond:.3g})")


def simulate_paths(cov: np.ndarray, n_paths: int, seed: int, block: int = 1000) -> np.ndarray:
    """Mean-zero Gaussian draws with covariance ``cov``; one row per path.

    Draws are generated in blocks seeded by ``(seed, block index)`` so the
    result does not depend on how the blocks are scheduled.
    """
    chol, _ = jittered_cholesky(cov)
    d = cov.shape[0]
    out = np.empty((n_paths, d))
    for b, start in enumerate(range(0, n_paths, block)):
        m = min(block, n_paths - start)
        z = np.random.default_rng([seed, b]).standard_normal((m, d))
        out[start:start + m] = z @ chol.T
    return out


def _process_covariance(bg: BoundsGrid, transformed: bool):
    E = np.hstack([bg.eif_lower, bg.eif_upper])
    cov = E.T @ E / bg.n
    if transformed:
        # standardize by the transformed scale: the correlation matrix of the process
        sd = np.sqrt(np.diag(cov))
        with np.errstate(invalid="ignore", divide="ignore"):
            cov = cov / np.outer(sd, sd)
        cov[~np.isfinite(cov)] = 0.0
    return cov


def path_maxima(bg: BoundsGrid, n_paths: int = 5000, seed: int = 0, transformed: bool = False) -> np.ndarray:
    """``max(sup_t xi_l, sup_t -xi_u)`` for each simulated path pair."""
    _check_grid(bg)
    if n_paths < 1000:
        raise ValueError("n_paths must be at least 1000")
    M = len(bg)
    xi = simulate_paths(_process_covariance(bg, transformed), n_paths, seed)
    return np.maximum(xi[:, :M].max(axis=1), (-xi[:, M:]).max(axis=1))


def _quantile(x: np.ndarray, level: float) -> float:
    return float(np.quantile(x, level, method="higher"))


@dataclass
class UniformBand:
    grid: np.ndarray
    v: np.ndarray
    alpha: float
    lower_limit: np.ndarray
    upper_limit: np.ndarray
    critical: float
    transformed: bool
    n_paths: int
    seed: int
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, lower_true, upper_true) -> bool:
        """Joint containment of a pair of bound curves."""
        return bool(np.all(self.lower_limit <= lower_true) and np.all(upper_true <= self.upper_limit))


def uniform_band(bounds_on_grid: BoundsGrid, alpha: float = 0.05, n_paths: int = 5000, seed: int = 0,
                 transformed: bool = False) -> UniformBand:
    bg = bounds_on_grid
    q = _quantile(path_maxima(bg, n_paths, seed, transformed), 1 - alpha)
    rn = math.sqrt(bg.n)
    if transformed:
        lo_b, up_b = _clamp_unit(bg.lower), _clamp_unit(bg.upper)
        sd_l = g_prime(lo_b) * np.sqrt(bg.var_lower)
        sd_u = g_prime(up_b) * np.sqrt(bg.var_upper)
        lower_limit = g_inv(g(lo_b) - q * sd_l / rn)
        upper_limit = g_inv(g(up_b) + q * sd_u / rn)
    else:
        lower_limit = bg.lower - q / rn
        upper_limit = bg.upper + q / rn
    return UniformBand(bg.times, bg.v, alpha, lower_limit, upper_limit, q, transformed, n_paths, seed,
                       bg.lower, bg.upper)


@dataclass
class UniformTestResult:
    theta0: float
    v: np.ndarray
    statistic: float
    critical: float
    reject: bool
    p_value: float

    def to_dict(self) -> dict:
        return {"theta0": self.theta0, "statistic": self.statistic, "critical": self.critical,
                "reject": self.reject, "p_value": self.p_value}


def uniform_statistic(bg: BoundsGrid, theta0: float) -> float:
    rn = math.sqrt(bg.n)
    return float(max(rn * np.max(bg.lower - theta0), rn * np.max(-(bg.upper - theta0))))


def uniform_test(bounds_on_grid: BoundsGrid, theta0: float = 0.0, alpha: float = 0.05, n_paths: int = 5000,
                 seed: int = 0) -> UniformTestResult:
    """Test that ``lower(t) <= theta0 <= upper(t)`` for every grid time."""
    bg = bounds_on_grid
    maxima = path_maxima(bg, n_paths, seed)
    q = _quantile(maxima, 1 - alpha)
    stat = uniform_statistic(bg, theta0)
    return UniformTestResult(theta0, bg.v, stat, q, bool(stat > q), float(np.mean(maxima >= stat)))


def default_band_grid(cross: CrossFit, n_points: int = 50, lower_quantile: float = 0.05,
                      psi_floor: float = 1e-4, n_candidates: int = 200) -> np.ndarray:
    """Equispaced grid on ``[t0, t1]``: ``t0`` is a low quantile of the observed
    times and ``t1`` the largest candidate time with ``psi_plus > psi_floor``."""
    y = cross.data.time
    t0 = float(np.quantile(y, lower_quantile))
    t_max = float(np.max(y[cross.data.event == 1]))
    if not t0 > 0:
        t0 = float(np.min(y[y > 0]))
    if t_max <= t0:
        raise GridError("no event times beyond the lower end of the band grid")
    cand = np.linspace(t0, t_max, n_candidates)
    comp = components_from_fits(cross, cand)
    ok = np.flatnonzero(comp.psi_plus > psi_floor)
    if ok.size == 0 or cand[ok[-1]] <= t0:
        raise GridError("psi_plus is below the floor on the whole candidate range")
    return np.linspace(t0, cand[ok[-1]], n_points)
