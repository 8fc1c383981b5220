"""Robustness values and benchmarking against observed covariates."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, FoldAssignment
from .estimation import Components, CrossFit, bounds_on_grid, components_from_fits, effect_bounds, fit_cross, v_from_q
from .inference import pointwise_ci, uniform_test
from .nuisance import NuisanceConfig


def robustness_value(theta_n: float, psi_plus: float, tau_plus: float, theta0: float = 0.0) -> float:
    """Smallest common value ``q`` of the two sensitivity parameters that puts
    ``theta0`` on the boundary of the estimated bounds.

    Solves ``q^2 + lam q - lam = 0`` with ``lam = (theta_n - theta0)^2 / (psi+ tau+)``.
    """
    gap2 = (theta_n - theta0) ** 2
    scale = psi_plus * tau_plus
    if scale <= 0:
        if gap2 == 0:
            return 0.0
        warnings.warn("psi_plus * tau_plus = 0: no finite confounding closes the gap; RV reported as 1",
                      RuntimeWarning, stacklevel=2)
        return 1.0
    lam = gap2 / scale
    if lam == 0:
        return 0.0
    # rationalized root avoids cancellation for small lam
    return 2 * lam / (lam + math.sqrt(lam * lam + 4 * lam))


def _bisect_smallest(accept, lo: float, hi: float, tol: float) -> float:
    """Smallest ``q`` in ``[lo, hi]`` with ``accept(q)``, assuming monotonicity."""
    if accept(lo):
        return lo
    if not accept(hi):
        raise ValueError(f"bisection bracket [{lo}, {hi}] does not contain a change of decision")
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if accept(mid):
            hi = mid
        else:
            lo = mid
    return hi


_Q_MAX = 1 - 1e-9


def mirv(components: Components, theta0: float = 0.0, alpha: float = 0.05, t: float | None = None,
         transformed: bool = False, tol: float = 1e-6, rho_cap: float = 1.0) -> float:
    """Smallest ``q`` at which the level-``alpha`` pointwise interval at
    ``v = q^2/(1-q)`` contains ``theta0``."""
    comp = components.at(t) if t is not None else components

    def contains(q):
        ci = pointwise_ci(effect_bounds(comp, v_from_q(q), rho_cap=rho_cap), alpha, transformed)
        return ci.lower_limit <= theta0 <= ci.upper_limit

    return _bisect_smallest(contains, 0.0, _Q_MAX, tol)


def umirv(components: Components, theta0: float = 0.0, alpha: float = 0.05, n_paths: int = 5000,
          seed: int = 0, tol: float = 1e-4, rho_cap: float = 1.0) -> float:
    """Smallest ``q`` at which the uniform test over ``components.times`` fails
    to reject; the same simulation seed is used for every ``q``."""

    def fails(q):
        bg = bounds_on_grid(components, v_from_q(q), rho_cap)
        return not uniform_test(bg, theta0, alpha, n_paths, seed).reject

    return _bisect_smallest(fails, 0.0, _Q_MAX, tol)


@dataclass
class SensitivityReport:
    t: float
    theta0: float
    alpha: float
    rv: float
    mirv: float
    umirv: float | None
    v_of_q: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"t": self.t, "theta0": self.theta0, "alpha": self.alpha, "rv": self.rv, "mirv": self.mirv,
                "umirv": self.umirv, "v_of_q": self.v_of_q}


def sensitivity_report(components: Components, t: float, theta0: float = 0.0, alpha: float = 0.05,
                       umirv_value: float | None = None, transformed: bool = False) -> SensitivityReport:
    comp = components.at(t)
    rv = robustness_value(float(comp.theta[0]), float(comp.psi_plus[0]), comp.tau_plus, theta0)
    m = mirv(comp, theta0, alpha, transformed=transformed)
    v_of_q = {"rv": v_from_q(min(rv, _Q_MAX)), "mirv": v_from_q(m)}
    if umirv_value is not None:
        v_of_q["umirv"] = v_from_q(umirv_value)
    return SensitivityReport(float(t), theta0, alpha, rv, m, umirv_value, v_of_q)


# ---------------------------------------------------------------------------
# benchmarking


@dataclass
class BenchmarkResult:
    t: float
    R: tuple[str, ...]
    s_T: float
    s_A: float
    s_combined: float
    rho: float
    d: int
    s_combined_alt: float = float("nan")
    theta: float = float("nan")
    theta_reduced: float = float("nan")
    degenerate_rho: bool = False
    s_A_raw: float = float("nan")

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, float) and not math.isfinite(v):
                v = None
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def combined_confounding(s_T: float, s_A: float, denominator: str = "printed") -> float:
    """``s_T s_A / (1 - 2 s_A)`` (``"printed"``) or ``s_T s_A / (1 - s_A)`` (``"bound"``)."""
    k = 2.0 if denominator == "printed" else 1.0
    if denominator not in ("printed", "bound"):
        raise ValueError("denominator must be 'printed' or 'bound'")
    den = 1 - k * s_A
    if s_T * s_A == 0:
        return 0.0
    return s_T * s_A / den if den > 0 else float("inf")


def _reduced_cross(cross: CrossFit, R: Sequence[str]) -> CrossFit:
    return fit_cross(cross.data.drop_covariates(R), cross.folds, cross.config, cross.clip_eps)


def benchmark_from_fits(cross: CrossFit, R: Sequence[str], times, full: Components | None = None,
                        reduced: CrossFit | None = None) -> list[BenchmarkResult]:
    R = tuple(R)
    if not R:
        raise ValueError("R must name at least one covariate")
    unknown = set(R) - set(cross.data.covariate_names)
    if unknown:
        raise ValueError(f"unknown covariates in R: {sorted(unknown)}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    full = full if full is not None else components_from_fits(cross, times)
    red = components_from_fits(reduced if reduced is not None else _reduced_cross(cross, R), times)
    a = cross.data.treatment.astype(float)
    alpha_full = a / full.pi - (1 - a) / full.pi_c
    alpha_red = a / red.pi - (1 - a) / red.pi_c
    e_alpha2 = float(np.mean(1 / (full.pi * full.pi_c)))
    e_alpha2_red = float(np.mean(1 / (red.pi * red.pi_c)))
    s_A_raw = 1 - e_alpha2_red / e_alpha2
    s_A = s_A_raw
    if s_A < 0:
        warnings.warn(f"s_A estimate {s_A_raw:.3g} < 0 clipped to 0", RuntimeWarning, stacklevel=2)
        s_A = 0.0
    elif s_A >= 1:
        s_A = float(np.nextafter(1.0, 0.0))
    alpha_gap = math.sqrt(float(np.mean((alpha_full - alpha_red) ** 2)))
    out = []
    for t in times:
        j_full, j_red = full.index(t), red.index(t)
        psi_plus = float(full.psi_plus[j_full])
        if psi_plus <= 0:
            raise ZeroDivisionError(f"psi_plus is zero at t={t:g}; s_T undefined")
        diff = full.fitted_survival[:, j_full] - red.fitted_survival[:, j_red]
        msq = float(np.mean(diff ** 2))
        s_T = msq / psi_plus
        th, th_r = float(full.theta[j_full]), float(red.theta[j_red])
        den = math.sqrt(msq) * alpha_gap
        degenerate = den == 0
        rho = 0.0 if degenerate else float(np.clip((th - th_r) / den, -1, 1))
        out.append(BenchmarkResult(float(t), R, s_T, s_A, combined_confounding(s_T, s_A, "printed"), rho,
                                   len(R), combined_confounding(s_T, s_A, "bound"), th, th_r, degenerate,
                                   s_A_raw))
    return out


def benchmark(data: Dataset, folds: FoldAssignment, t, R: Sequence[str],
              nuisance_config: NuisanceConfig | None = None, clip_eps: float = 0.01) -> BenchmarkResult:
    """Observed confounding by the covariates ``R`` at time ``t``."""
    cross = fit_cross(data, folds, nuisance_config, clip_eps)
    return benchmark_from_fits(cross, R, [t])[0]


@dataclass
class LeaveDOutResult:
    d: int
    t: float
    subsets: list[tuple[str, ...]]
    values: np.ndarray
    mean: float
    quartiles: tuple[float, float, float]
    se: float
    exhaustive: bool
    n_failed: int
    results: list[BenchmarkResult] = field(default_factory=list, repr=False)


def _choose_subsets(names, d, max_subsets, seed):
    p = len(names)
    total = math.comb(p, d)
    if total <= max_subsets:
        return [tuple(c) for c in itertools.combinations(names, d)], True
    rng = np.random.default_rng(seed)
    seen, out = set(), []
    while len(out) < max_subsets:
        idx = tuple(sorted(rng.choice(p, size=d, replace=False).tolist()))
        if idx not in seen:
            seen.add(idx)
            out.append(tuple(names[i] for i in idx))
    return out, False


def leave_d_out_from_fits(cross: CrossFit, t: float, d: int, max_subsets: int = 100, seed: int = 0,
                          full: Components | None = None) -> LeaveDOutResult:
    names = list(cross.data.covariate_names)
    if not 1 <= d <= len(names):
        raise ValueError(f"d must lie in [1, {len(names)}]")
    subsets, exhaustive = _choose_subsets(names, d, max_subsets, seed)
    full = full if full is not None else components_from_fits(cross, [t])
    results, failed = [], 0
    for R in subsets:
        try:
            results.append(benchmark_from_fits(cross, R, [t], full)[0])
        except Exception as exc:  # a failing refit drops the subset
            warnings.warn(f"benchmark for R={R} skipped: {exc}", RuntimeWarning, stacklevel=2)
            failed += 1
    vals = np.array([r.s_combined for r in results], dtype=float)
    if vals.size == 0:
        raise RuntimeError("every subset refit failed")
    q = np.quantile(vals, [0.25, 0.5, 0.75])
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return LeaveDOutResult(d, float(t), [r.R for r in results], vals, float(vals.mean()),
                           tuple(float(x) for x in q), se, exhaustive, failed, results)


def leave_d_out(data: Dataset, folds: FoldAssignment, t: float, d: int, max_subsets: int = 100, seed: int = 0,
                nuisance_config: NuisanceConfig | None = None, clip_eps: float = 0.01) -> LeaveDOutResult:
    """Average observed confounding over covariate subsets of size ``d``."""
    cross = fit_cross(data, folds, nuisance_config, clip_eps)
    return leave_d_out_from_fits(cross, t, d, max_subsets, seed)


def implied_d(rv: float, mean_by_d: dict[int, float]) -> int | None:
    """Largest ``d`` whose average observed confounding is at most ``rv^2/(1-rv)``."""
    thr = v_from_q(min(rv, _Q_MAX))
    ok = [d for d, m in sorted(mean_by_d.items()) if thr >= m]
    return max(ok) if ok else None


def exceeds_threshold(s_combined: float, q: float) -> bool:
    """True when observed confounding ``s`` is larger than ``q^2/(1-q)``."""
    return s_combined > v_from_q(q)
