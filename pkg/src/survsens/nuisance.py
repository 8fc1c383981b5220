"""Nuisance estimators: conditional event survival, censoring survival, propensity.

All survival predictions are step functions in time. A fitted survival model
returns a :class:`StepCurves` batch (one curve per requested ``(a, w)`` row,
all sharing the model's jump times) described by its discrete hazard
increments, so the survival curve is always the product integral of its
hazard. The built-in library is a Kaplan-Meier estimator (optionally
stratified), a Cox proportional hazards model with Breslow ties and baseline,
and a logistic regression propensity model fitted by IRLS. Any object with
the same ``fit``/``predict`` methods can be plugged in through
:class:`NuisanceConfig`.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import linalg, special

from .data import Dataset

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


class DesignError(ValueError):
    pass


# ---------------------------------------------------------------------------
# single step curves


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """A nonincreasing step survival function with ``S(0-) = 1``.

    ``values[j]`` is the survival right after ``jump_times[j]``. With
    ``continuity="left"`` the curve is evaluated as ``S(t-)`` (the convention
    used for the censoring survival ``G(t) = P(C >= t)``).
    """

    jump_times: np.ndarray
    values: np.ndarray
    continuity: str = "right"

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("jump_times and values must be 1-d of equal length")
        if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
            raise ValueError("jump_times must be finite and strictly increasing")
        if np.any(v < 0) or np.any(v > 1) or np.any(np.diff(np.r_[1.0, v]) > 1e-15):
            raise ValueError("values must lie in [0, 1] and be nonincreasing from 1")
        if self.continuity not in ("right", "left"):
            raise ValueError("continuity must be 'right' or 'left'")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        side = "right" if self.continuity == "right" else "left"
        return self._at(np.searchsorted(self.jump_times, t, side=side) - 1)

    def _at(self, k):
        if self.values.size == 0:
            return np.ones(np.shape(k))
        return np.where(k >= 0, self.values[np.maximum(k, 0)], 1.0)

    def left_limit(self, t):
        return self._at(np.searchsorted(self.jump_times, t, side="left") - 1)


@dataclass(frozen=True, eq=False)
class CumulativeHazard:
    jump_times: np.ndarray
    increments: np.ndarray

    def __call__(self, t):
        return np.r_[0.0, np.cumsum(self.increments)][np.searchsorted(self.jump_times, t, side="right")]


def hazard_from_survival(curve: SurvivalCurve) -> CumulativeHazard:
    """Discrete hazard ``dL(u) = [S(u-) - S(u)] / S(u-)`` at each jump of ``curve``."""
    before = np.r_[1.0, curve.values[:-1]]
    drop = before - curve.values
    keep = drop > 0
    assert np.all(before[keep] > 0), "jump from zero survival"
    return CumulativeHazard(curve.jump_times[keep], drop[keep] / before[keep])


def product_integral(hazard: CumulativeHazard, continuity: str = "right") -> SurvivalCurve:
    values = np.cumprod(1.0 - np.asarray(hazard.increments, dtype=float))
    return SurvivalCurve(hazard.jump_times, np.clip(values, 0.0, 1.0), continuity)


# ---------------------------------------------------------------------------
# batches of curves sharing jump times


class StepCurves:
    """Survival curves for ``n`` rows evaluated on shared jump times.

    ``hazard[i, j]`` is the discrete hazard of row ``i`` at ``jump_times[j]``;
    a value of exactly one drives the survival to zero. Log-survival is kept
    separately from a count of such full jumps so that ratios
    ``S(t)/S(u)`` stay exact when survival reaches zero.
    """

    def __init__(self, jump_times, hazard):
        self.jump_times = np.asarray(jump_times, dtype=float)
        hazard = np.clip(np.asarray(hazard, dtype=float), 0.0, 1.0)
        if hazard.ndim != 2 or hazard.shape[1] != self.jump_times.size:
            raise ValueError("hazard must have shape (n, len(jump_times))")
        self.hazard = hazard
        full = hazard >= 1.0
        with np.errstate(divide="ignore"):
            self.log_surv = np.cumsum(np.log1p(-np.where(full, 0.0, hazard)), axis=1)
        self.n_full = np.cumsum(full, axis=1)

    @property
    def n(self) -> int:
        return self.hazard.shape[0]

    def index(self, t, side="right"):
        return np.searchsorted(self.jump_times, t, side=side) - 1

    def _gather(self, k):
        # k: (n, m) jump indices, -1 meaning before the first jump
        kk = np.maximum(k, 0)
        log_s = np.take_along_axis(self.log_surv, kk, axis=1) if self.jump_times.size else np.zeros(k.shape)
        nf = np.take_along_axis(self.n_full, kk, axis=1) if self.jump_times.size else np.zeros(k.shape, int)
        log_s = np.where(k >= 0, log_s, 0.0)
        nf = np.where(k >= 0, nf, 0)
        return log_s, nf

    def _eval(self, k):
        log_s, nf = self._gather(k)
        return np.where(nf == 0, np.exp(log_s), 0.0)

    def survival(self, t) -> np.ndarray:
        """``S(t)`` for every row at the common times ``t``; shape ``(n, len(t))``."""
        k = np.broadcast_to(self.index(np.atleast_1d(t)), (self.n, np.size(t)))
        return self._eval(k)

    def survival_left(self, t) -> np.ndarray:
        """Left limits ``S(t-)``; shape ``(n, len(t))``."""
        k = np.broadcast_to(self.index(np.atleast_1d(t), "left"), (self.n, np.size(t)))
        return self._eval(k)

    def survival_at(self, t_row, left=False) -> np.ndarray:
        """Evaluate row ``i`` at its own time ``t_row[i]``."""
        k = self.index(np.asarray(t_row, dtype=float), "left" if left else "right")[:, None]
        return self._eval(k)[:, 0]

    def curve(self, i: int) -> SurvivalCurve:
        k = np.arange(self.jump_times.size)[None, :]
        log_s, nf = self.log_surv[i][None, :], self.n_full[i][None, :]
        vals = np.where(nf == 0, np.exp(log_s), 0.0)[0] if k.size else np.zeros(0)
        return SurvivalCurve(self.jump_times, np.minimum.accumulate(np.clip(vals, 0, 1)))


# ---------------------------------------------------------------------------
# covariate basis


@dataclass(frozen=True)
class Basis:
    """Covariate expansion used by the regression nuisance models.

    ``linear`` keeps every covariate as is; ``sqrt`` adds square-root terms
    for the named (nonnegative) covariates; ``splines`` maps a covariate name
    to knots for truncated-power terms ``(x - knot)_+ ** degree`` (with the
    polynomial terms ``x**2 .. x**degree`` added when ``degree > 1``).
    Names absent from the data are skipped, so the same basis applies after
    covariates are dropped for benchmarking.
    """

    linear: bool = True
    sqrt: tuple[str, ...] = ()
    splines: tuple[tuple[str, tuple[float, ...]], ...] = ()
    degree: int = 1

    def terms(self, names: Sequence[str]) -> list[str]:
        out = list(names) if self.linear else []
        out += [f"sqrt({nm})" for nm in self.sqrt if nm in names]
        for nm, knots in self.splines:
            if nm in names:
                out += [f"{nm}^{d}" for d in range(2, self.degree + 1)]
                out += [f"({nm}-{k:g})_+^{self.degree}" for k in knots]
        return out

    def transform(self, W: np.ndarray, names: Sequence[str]) -> np.ndarray:
        W = np.asarray(W, dtype=float).reshape(len(W), -1)
        names = list(names)
        cols = [W[:, j] for j in range(W.shape[1])] if self.linear else []
        for nm in self.sqrt:
            if nm in names:
                x = W[:, names.index(nm)]
                if np.any(x < 0):
                    raise DesignError(f"sqrt basis term needs nonnegative {nm}")
                cols.append(np.sqrt(x))
        for nm, knots in self.splines:
            if nm in names:
                x = W[:, names.index(nm)]
                cols += [x ** d for d in range(2, self.degree + 1)]
                cols += [np.maximum(x - k, 0.0) ** self.degree for k in knots]
        return np.column_stack(cols) if cols else np.empty((W.shape[0], 0))

    def to_dict(self) -> dict:
        return {"linear": self.linear, "sqrt": list(self.sqrt),
                "splines": {nm: list(k) for nm, k in self.splines}, "degree": self.degree}

    @classmethod
    def from_dict(cls, d: dict) -> "Basis":
        return cls(d.get("linear", True), tuple(d.get("sqrt", ())),
                   tuple((nm, tuple(k)) for nm, k in d.get("splines", {}).items()), d.get("degree", 1))


class _Design:
    """Centered design with constant and collinear columns removed."""

    def __init__(self, X: np.ndarray, names: Sequence[str], strict: bool = False, tol: float = 1e-10):
        self.names_all = list(names)
        # midrange centering keeps relabelled binary columns exact negatives
        self.mean = (X.max(axis=0) + X.min(axis=0)) / 2 if X.shape[0] else np.zeros(X.shape[1])
        Xc = X - self.mean
        scale = X.std(axis=0) if X.shape[0] else np.zeros(X.shape[1])
        keep = np.flatnonzero(scale > tol * np.maximum(1.0, np.abs(X).max(axis=0, initial=0.0)))
        if keep.size:
            _, r, piv = linalg.qr(Xc[:, keep] / scale[keep], mode="economic", pivoting=True)
            d = np.abs(np.diag(r))
            rank = int(np.sum(d > tol * max(d[0], 1.0) * max(X.shape)))
            if rank < keep.size and strict:
                raise DesignError("design matrix is rank deficient")
            keep = np.sort(keep[piv[:rank]])
        dropped = sorted(set(range(X.shape[1])) - set(keep.tolist()))
        if dropped:
            if strict and any(scale[j] > 0 for j in dropped):
                raise DesignError("design matrix is rank deficient")
            logger.debug("dropping design columns %s", [self.names_all[j] for j in dropped])
        self.keep = keep
        self.scale = scale[keep]
        self.dropped = [self.names_all[j] for j in dropped]

    @property
    def names(self):
        return [self.names_all[j] for j in self.keep]

    def __call__(self, X):
        return (np.asarray(X, dtype=float) - self.mean)[:, self.keep]


# ---------------------------------------------------------------------------
# survival models


class SurvivalModel(Protocol):
    def fit(self, data: Dataset, target: str = "event") -> "SurvivalModel": ...

    def predict(self, a, W) -> StepCurves: ...


def _target_indicator(data: Dataset, target: str) -> np.ndarray:
    if target == "event":
        return data.event
    if target == "censoring":
        return 1 - data.event
    raise ValueError("target must be 'event' or 'censoring'")


def _product_limit(y, d, times):
    """Event counts and risk-set sizes at ``times``."""
    ys = np.sort(y)
    at_risk = ys.size - np.searchsorted(ys, times, side="left")
    events = np.bincount(np.searchsorted(times, y[d == 1]), minlength=times.size)[:times.size]
    return events, at_risk


class KaplanMeier:
    """Product-limit estimator, optionally stratified.

    Strata are the treatment arm (``stratify_by_treatment``) crossed with the
    exact values of any ``strata_covariates``; the latter is intended for
    discrete covariates only.
    """

    def __init__(self, stratify_by_treatment: bool = True, strata_covariates: Sequence[str] = ()):
        self.stratify_by_treatment = stratify_by_treatment
        self.strata_covariates = tuple(strata_covariates)

    def _keys(self, a, W, names):
        cols = []
        if self.stratify_by_treatment:
            cols.append(np.asarray(a, dtype=float).reshape(-1))
        for nm in self.strata_covariates:
            cols.append(np.asarray(W, dtype=float)[:, list(names).index(nm)])
        if not cols:
            return [()] * len(np.asarray(a).reshape(-1))
        return [tuple(r) for r in np.column_stack(cols).tolist()]

    def fit(self, data: Dataset, target: str = "event") -> "KaplanMeier":
        d = _target_indicator(data, target)
        self.target = target
        self.covariate_names = data.covariate_names
        keys = self._keys(data.treatment, data.covariates, data.covariate_names)
        self.jump_times_ = np.unique(data.time[d == 1])
        self.strata_ = {}
        for key in sorted(set(keys)):
            idx = np.array([k == key for k in keys])
            events, at_risk = _product_limit(data.time[idx], d[idx], self.jump_times_)
            with np.errstate(invalid="ignore", divide="ignore"):
                self.strata_[key] = np.where(at_risk > 0, events / np.maximum(at_risk, 1), 0.0)
        return self

    def predict(self, a, W=None) -> StepCurves:
        a = np.asarray(a).reshape(-1)
        W = np.zeros((a.size, 0)) if W is None else np.asarray(W, dtype=float).reshape(a.size, -1)
        keys = self._keys(a, W, self.covariate_names)
        missing = set(keys) - set(self.strata_)
        if missing:
            raise ValueError(f"no training data for strata {sorted(missing)}")
        uniq = list(self.strata_)
        table = np.array([self.strata_[k] for k in uniq]).reshape(len(uniq), -1)
        pos = {k: i for i, k in enumerate(uniq)}
        return StepCurves(self.jump_times_, table[[pos[k] for k in keys]])

    def curve(self, key=(1,)) -> SurvivalCurve:
        vals = np.cumprod(1.0 - self.strata_[tuple(float(x) for x in key)])
        return SurvivalCurve(self.jump_times_, np.clip(vals, 0, 1))

    def summary(self) -> dict:
        return {"model": "kaplan-meier", "target": self.target,
                "strata": [list(k) for k in self.strata_], "n_jumps": int(self.jump_times_.size)}


def fit_kaplan_meier(data: Dataset, stratify_by_treatment: bool = True, target: str = "event",
                     strata_covariates: Sequence[str] = ()) -> KaplanMeier:
    if stratify_by_treatment:
        for arm in (0, 1):
            if not np.any(data.treatment == arm):
                raise ValueError(f"empty stratum: no units with treatment={arm}")
    return KaplanMeier(stratify_by_treatment, strata_covariates).fit(data, target)


def _newton(objective, beta0, tol, max_iter, max_halving, guard=None):
    """Damped Newton ascent. ``objective(beta) -> (value, grad, hess)``."""
    beta = beta0.copy()
    val, grad, hess = objective(beta)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) < tol:
            return beta, val, it - 1, True
        try:
            step = linalg.solve(-hess, grad, assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(-hess, grad)[0]
        for _ in range(max_halving + 1):
            cand = beta + step
            cval, cgrad, chess = objective(cand)
            if np.isfinite(cval) and cval >= val - 1e-12 * max(1.0, abs(val)):
                break
            step = step / 2
        else:
            raise ConvergenceError("step halving failed to improve the objective")
        beta, val, grad, hess = cand, cval, cgrad, chess
        if guard is not None:
            guard(beta)
    converged = np.max(np.abs(grad), initial=0.0) < tol
    return beta, val, max_iter, converged


class CoxPH:
    """Cox proportional hazards model with Breslow ties and baseline hazard.

    The design is ``[treatment, basis(W)]``, centered on the training data.
    Coefficients maximize the (optionally ridge-penalized) log partial
    likelihood by damped Newton iterations. Predicted survival is
    ``exp(-L0(t) exp(x'b))``, represented through per-jump discrete hazards
    ``1 - exp(-dL0 exp(x'b))``.
    """

    def __init__(self, basis: Basis | None = None, ridge: float = 0.0, include_treatment: bool = True,
                 tol: float = 1e-8, max_iter: int = 100, max_halving: int = 20,
                 max_scaled_coef: float = 15.0, strict: bool = False):
        self.basis = basis or Basis()
        self.ridge = ridge
        self.include_treatment = include_treatment
        self.tol = tol
        self.max_iter = max_iter
        self.max_halving = max_halving
        self.max_scaled_coef = max_scaled_coef
        self.strict = strict

    def _raw_design(self, a, W):
        a = np.asarray(a, dtype=float).reshape(-1)
        W = np.asarray(W, dtype=float).reshape(a.size, -1)
        parts = [a[:, None]] if self.include_treatment else []
        parts.append(self.basis.transform(W, self.covariate_names))
        return np.column_stack(parts) if parts else np.empty((a.size, 0))

    def fit(self, data: Dataset, target: str = "event") -> "CoxPH":
        d = _target_indicator(data, target)
        if not np.any(d == 1):
            raise ValueError(f"no {target} times to fit a Cox model")
        self.target = target
        self.covariate_names = data.covariate_names
        names = (["treatment"] if self.include_treatment else []) + self.basis.terms(data.covariate_names)
        self.design_ = _Design(self._raw_design(data.treatment, data.covariates), names, self.strict)
        X = self.design_(self._raw_design(data.treatment, data.covariates))
        y = data.time
        order = np.argsort(-y, kind="stable")
        ys, Xs, ds = y[order], X[order], d[order]
        times = np.unique(y[d == 1])
        pos = np.searchsorted(-ys, -times, side="right") - 1
        n_events = np.bincount(np.searchsorted(times, y[d == 1]), minlength=times.size)
        x_event_sum = X[d == 1].sum(axis=0)
        p = X.shape[1]
        ridge = self.ridge

        def objective(beta):
            eta = Xs @ beta
            c = eta.max() if eta.size else 0.0
            r = np.exp(eta - c)
            s0 = np.cumsum(r)[pos]
            s1 = np.cumsum(r[:, None] * Xs, axis=0)[pos]
            s2 = np.cumsum(r[:, None, None] * Xs[:, :, None] * Xs[:, None, :], axis=0)[pos]
            xbar = s1 / s0[:, None]
            ll = x_event_sum @ beta - np.sum(n_events * (np.log(s0) + c))
            grad = x_event_sum - n_events @ xbar
            hess = -(np.einsum("j,jkl->kl", n_events, s2 / s0[:, None, None])
                     - np.einsum("j,jk,jl->kl", n_events, xbar, xbar))
            if ridge:
                ll -= 0.5 * ridge * beta @ beta
                grad = grad - ridge * beta
                hess = hess - ridge * np.eye(p)
            return ll, grad, hess

        def guard(beta):
            if ridge == 0 and np.any(np.abs(beta) * self.design_.scale > self.max_scaled_coef):
                raise ConvergenceError("monotone likelihood: a Cox coefficient is diverging; "
                                       "set a ridge penalty")

        if p:
            beta, ll, n_iter, ok = _newton(objective, np.zeros(p), self.tol, self.max_iter,
                                           self.max_halving, guard)
            if not ok:
                raise ConvergenceError(f"Cox fit did not converge in {self.max_iter} iterations")
            guard(beta)
        else:
            beta, n_iter = np.zeros(0), 0
            ll = objective(beta)[0]
        self.coef_ = beta
        self.loglik_ = float(ll)
        self.n_iter_ = n_iter
        eta = Xs @ beta
        c = eta.max() if eta.size else 0.0
        s0 = np.cumsum(np.exp(eta - c))[pos]
        self.jump_times_ = times
        self.baseline_hazard_ = n_events / s0 * np.exp(-c)
        return self

    def linear_predictor(self, a, W) -> np.ndarray:
        return self.design_(self._raw_design(a, W)) @ self.coef_

    def baseline_cumulative_hazard(self, t):
        return CumulativeHazard(self.jump_times_, self.baseline_hazard_)(t)

    def predict(self, a, W) -> StepCurves:
        risk = np.exp(self.linear_predictor(a, W))
        return StepCurves(self.jump_times_, -np.expm1(-np.outer(risk, self.baseline_hazard_)))

    def summary(self) -> dict:
        return {"model": "cox", "target": self.target, "terms": self.design_.names,
                "coef": self.coef_.tolist(), "dropped_terms": self.design_.dropped,
                "iterations": self.n_iter_, "loglik": self.loglik_, "n_jumps": int(self.jump_times_.size)}


class StratifiedCox:
    """Separate Cox models (without a treatment term) within each treatment arm."""

    def __init__(self, basis: Basis | None = None, ridge: float = 0.0, **kwargs):
        self.basis = basis or Basis()
        self.ridge = ridge
        self.kwargs = kwargs

    def fit(self, data: Dataset, target: str = "event") -> "StratifiedCox":
        self.target = target
        self.arms_ = {}
        for arm in (0, 1):
            sub = data.subset(np.flatnonzero(data.treatment == arm))
            self.arms_[arm] = CoxPH(self.basis, self.ridge, include_treatment=False,
                                    **self.kwargs).fit(sub, target)
        self.jump_times_ = np.union1d(self.arms_[0].jump_times_, self.arms_[1].jump_times_)
        return self

    def predict(self, a, W) -> StepCurves:
        a = np.asarray(a).reshape(-1)
        W = np.asarray(W, dtype=float).reshape(a.size, -1)
        hazard = np.zeros((a.size, self.jump_times_.size))
        for arm, model in self.arms_.items():
            rows = np.flatnonzero(a == arm)
            if rows.size:
                cols = np.searchsorted(self.jump_times_, model.jump_times_)
                hazard[np.ix_(rows, cols)] = model.predict(a[rows], W[rows]).hazard
        return StepCurves(self.jump_times_, hazard)

    def summary(self) -> dict:
        return {"model": "cox-stratified", "target": self.target,
                "arms": {str(k): m.summary() for k, m in self.arms_.items()}}


def fit_cox(data: Dataset, target: str = "event", basis: Basis | None = None, ridge: float = 0.0,
            **kwargs) -> CoxPH:
    return CoxPH(basis, ridge, **kwargs).fit(data, target)


# ---------------------------------------------------------------------------
# propensity


class LogisticPropensity:
    """Logistic regression of treatment on ``basis(W)`` fitted by IRLS."""

    def __init__(self, basis: Basis | None = None, ridge: float = 0.0, eps: float = 0.01,
                 tol: float = 1e-8, max_iter: int = 100, max_halving: int = 20,
                 max_scaled_coef: float = 15.0, strict: bool = False):
        if not 0 <= eps < 0.5:
            raise ValueError("eps must lie in [0, 0.5)")
        self.basis = basis or Basis()
        self.ridge = ridge
        self.eps = eps
        self.tol = tol
        self.max_iter = max_iter
        self.max_halving = max_halving
        self.max_scaled_coef = max_scaled_coef
        self.strict = strict

    def fit(self, data: Dataset) -> "LogisticPropensity":
        a = data.treatment.astype(float)
        if a.min() == a.max():
            raise ValueError("both treatment values must be present to fit a propensity model")
        self.covariate_names = data.covariate_names
        Z = self.basis.transform(data.covariates, data.covariate_names)
        self.design_ = _Design(Z, self.basis.terms(data.covariate_names), self.strict)
        X = np.column_stack([np.ones(a.size), self.design_(Z)])
        p = X.shape[1]
        penalty = np.r_[0.0, np.full(p - 1, self.ridge)]

        sign = 2 * a - 1

        # written symmetrically in (a, eta) -> (1 - a, -eta) so relabelled
        # treatments give exactly negated coefficients
        def objective(beta):
            eta = X @ beta
            ll = -np.sum(np.logaddexp(0.0, -sign * eta)) - 0.5 * np.sum(penalty * beta ** 2)
            resid = sign * special.expit(-sign * eta)
            grad = X.T @ resid - penalty * beta
            hess = -(X.T * (special.expit(eta) * special.expit(-eta))) @ X - np.diag(penalty)
            return ll, grad, hess

        def guard(beta):
            if self.ridge == 0 and np.any(np.abs(beta[1:]) * self.design_.scale > self.max_scaled_coef):
                raise ConvergenceError("complete separation: a logistic coefficient is diverging; "
                                       "set a ridge penalty")

        beta, ll, n_iter, ok = _newton(objective, np.zeros(p), self.tol, self.max_iter, self.max_halving, guard)
        if not ok:
            raise ConvergenceError(f"logistic fit did not converge in {self.max_iter} iterations")
        guard(beta)
        self.coef_ = beta
        self.loglik_ = float(ll)
        self.n_iter_ = n_iter
        return self

    def _eta(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float).reshape(len(W), -1)
        Z = self.design_(self.basis.transform(W, self.covariate_names))
        return self.coef_[0] + Z @ self.coef_[1:]

    def predict_raw(self, W) -> np.ndarray:
        return special.expit(self._eta(W))

    def predict(self, W) -> np.ndarray:
        return np.clip(self.predict_raw(W), self.eps, 1 - self.eps)

    def predict_pair(self, W) -> tuple[np.ndarray, np.ndarray]:
        """Clipped ``(pi, 1 - pi)``, each computed directly from the linear predictor."""
        eta = self._eta(W)
        lo, hi = self.eps, 1 - self.eps
        return np.clip(special.expit(eta), lo, hi), np.clip(special.expit(-eta), lo, hi)

    def summary(self) -> dict:
        return {"model": "logistic", "terms": ["intercept"] + self.design_.names,
                "coef": self.coef_.tolist(), "dropped_terms": self.design_.dropped,
                "iterations": self.n_iter_, "loglik": self.loglik_, "eps": self.eps}


def fit_logistic(data: Dataset, basis: Basis | None = None, ridge: float = 0.0,
                 eps: float = 0.01, **kwargs) -> LogisticPropensity:
    return LogisticPropensity(basis, ridge, eps, **kwargs).fit(data)


# ---------------------------------------------------------------------------
# the nuisance trio


@dataclass(frozen=True)
class NuisanceConfig:
    """Which estimators to use for ``S``, ``G`` and the propensity.

    ``survival`` and ``censoring`` take ``"cox"``, ``"cox-stratified"`` or
    ``"km"``. ``survival_factory``/``censoring_factory``/``propensity_factory``
    override the built-in choices with any zero-argument callable returning an
    unfitted model.
    """

    survival: str = "cox"
    censoring: str = "cox"
    basis: Basis = field(default_factory=Basis)
    ridge: float = 0.0
    propensity_ridge: float = 0.0
    propensity_eps: float = 0.01
    km_strata: tuple[str, ...] = ()
    survival_factory: Callable[[], SurvivalModel] | None = None
    censoring_factory: Callable[[], SurvivalModel] | None = None
    propensity_factory: Callable[[], object] | None = None

    def _survival_model(self, kind, factory):
        if factory is not None:
            return factory()
        if kind == "cox":
            return CoxPH(self.basis, self.ridge)
        if kind == "cox-stratified":
            return StratifiedCox(self.basis, self.ridge)
        if kind == "km":
            return KaplanMeier(True, self.km_strata)
        raise ValueError(f"unknown survival model {kind!r}")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not k.endswith("_factory")}
        d["basis"] = self.basis.to_dict()
        d["km_strata"] = list(self.km_strata)
        d["custom_models"] = [k for k in ("survival_factory", "censoring_factory", "propensity_factory")
                              if getattr(self, k) is not None]
        return d


@dataclass
class NuisanceFit:
    survival_model: SurvivalModel
    censoring_model: SurvivalModel
    propensity_model: object
    basis: Basis
    eps: float

    def survival_curves(self, a, W) -> StepCurves:
        return self.survival_model.predict(a, W)

    def censoring_curves(self, a, W) -> StepCurves:
        return self.censoring_model.predict(a, W)

    def propensity(self, W) -> np.ndarray:
        return self.propensity_model.predict(W)

    def propensity_pair(self, W) -> tuple[np.ndarray, np.ndarray]:
        if hasattr(self.propensity_model, "predict_pair"):
            return self.propensity_model.predict_pair(W)
        pi = np.asarray(self.propensity_model.predict(W), dtype=float)
        return pi, 1 - pi

    def predict_survival(self, t, a, w) -> np.ndarray:
        a, W = _rows(a, w)
        return self.survival_curves(a, W).survival(np.atleast_1d(t)).squeeze()

    def predict_censoring_left(self, t, a, w) -> np.ndarray:
        """``G(t | a, w) = P(C >= t | a, w)``, the left limit of the censoring survival."""
        a, W = _rows(a, w)
        return self.censoring_curves(a, W).survival_left(np.atleast_1d(t)).squeeze()

    def predict_propensity(self, w) -> np.ndarray:
        return self.propensity(np.atleast_2d(np.asarray(w, dtype=float))).squeeze()

    def summary(self) -> dict:
        out = {}
        for key, m in (("survival", self.survival_model), ("censoring", self.censoring_model),
                       ("propensity", self.propensity_model)):
            out[key] = m.summary() if hasattr(m, "summary") else {"model": type(m).__name__}
        return out


def _rows(a, w):
    a = np.atleast_1d(np.asarray(a))
    W = np.asarray(w, dtype=float)
    W = W.reshape(1, -1) if W.ndim <= 1 and a.size == 1 else W.reshape(a.size, -1)
    return a, W


def fit_nuisance(data: Dataset, config: NuisanceConfig | None = None) -> NuisanceFit:
    config = config or NuisanceConfig()
    surv = config._survival_model(config.survival, config.survival_factory).fit(data, "event")
    if config.censoring_factory is None and not np.any(data.event == 0):
        # no censoring in the training data: G is identically one
        cens = KaplanMeier(stratify_by_treatment=False).fit(data, "censoring")
    else:
        cens = config._survival_model(config.censoring, config.censoring_factory).fit(data, "censoring")
    if config.propensity_factory is not None:
        prop = config.propensity_factory().fit(data)
    else:
        prop = LogisticPropensity(config.basis, config.propensity_ridge, config.propensity_eps).fit(data)
    return NuisanceFit(surv, cens, prop, config.basis, getattr(prop, "eps", config.propensity_eps))


def clip_warning(kind: str, rate: float) -> None:
    if rate > 0:
        warnings.warn(f"{kind} clipping active for {rate:.1%} of evaluations", RuntimeWarning, stacklevel=3)
