"""Cross-fitted one-step estimators and effect bounds."""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment, check_feasible
from .eif import ClipCounter, Terms, evaluate_terms, rmst_terms, trapezoid_weights
from .nuisance import NuisanceConfig, NuisanceFit, fit_nuisance


class FoldError(RuntimeError):
    """A nuisance fit failed on one training fold."""

    def __init__(self, fold: int, error: Exception):
        super().__init__(f"nuisance fit failed on training set for fold {fold}: {error}")
        self.fold = fold
        self.error = error


class DegenerateBoundsWarning(RuntimeWarning):
    pass


def positive_part(one_step, plug_in):
    """One-step value where it is strictly positive, otherwise the plug-in."""
    one_step = np.asarray(one_step, dtype=float)
    plug_in = np.asarray(plug_in, dtype=float)
    assert np.all(plug_in >= 0), "plug-in estimate must be nonnegative"
    out = np.where(one_step > 0, one_step, plug_in)
    return float(out) if out.ndim == 0 else out


def _fit_one(args):
    data, train, config, fold = args
    try:
        return fit_nuisance(data.subset(train), config)
    except Exception as exc:  # annotate with the fold id
        raise FoldError(fold, exc) from exc


@dataclass
class CrossFit:
    """Per-fold nuisance fits for a dataset."""

    data: Dataset
    folds: FoldAssignment
    config: NuisanceConfig
    fits: list[NuisanceFit]
    clip_eps: float = 0.01

    def terms(self, times) -> list[tuple[np.ndarray, Terms]]:
        out = []
        for (fold, _, ev), fit in zip(self.folds, self.fits):
            d = self.data
            out.append((ev, evaluate_terms(fit, d.time[ev], d.event[ev], d.treatment[ev],
                                           d.covariates[ev], times, self.clip_eps)))
        return out

    def propensity_clip_rate(self) -> float:
        clipped = total = 0
        for (_, _, ev), fit in zip(self.folds, self.fits):
            model = fit.propensity_model
            if hasattr(model, "predict_raw"):
                raw = model.predict_raw(self.data.covariates[ev])
                eps = model.eps
                clipped += int(np.sum((raw < eps) | (raw > 1 - eps)))
                total += raw.size
        return clipped / total if total else 0.0

    def summaries(self) -> list[dict]:
        return [{"fold": k + 1, **fit.summary()} for k, fit in enumerate(self.fits)]


def fit_cross(data: Dataset, folds: FoldAssignment, config: NuisanceConfig | None = None,
              clip_eps: float = 0.01, workers: int = 1) -> CrossFit:
    """Fit the nuisance trio on every training complement, in fold order."""
    if folds.n != data.n:
        raise ValueError("fold assignment does not match the dataset size")
    check_feasible(data, folds)
    config = config or NuisanceConfig()
    jobs = [(data, train, config, fold) for fold, train, _ in folds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, folds.k)) as pool:
            fits = list(pool.map(_fit_one, jobs))
    else:
        fits = [_fit_one(job) for job in jobs]
    return CrossFit(data, folds, config, fits, clip_eps)


def _assemble(cross: CrossFit, times):
    n = cross.data.n
    M = np.size(times)
    arrays = {k: np.zeros((n, M)) for k in ("theta", "psi", "theta_plug", "psi_plug", "S", "SH")}
    vec = {k: np.zeros(n) for k in ("tau", "tau_plug", "pi", "pi_c")}
    counter = ClipCounter()
    for ev, tm in cross.terms(times):
        arrays["theta"][ev] = tm.theta()
        arrays["psi"][ev] = tm.psi()
        arrays["theta_plug"][ev] = tm.theta_plugin()
        arrays["psi_plug"][ev] = tm.psi_plugin()
        arrays["S"][ev] = tm.S
        arrays["SH"][ev] = tm.SH
        vec["tau"][ev] = tm.tau()
        vec["tau_plug"][ev] = tm.tau_plugin()
        vec["pi"][ev] = tm.pi
        vec["pi_c"][ev] = tm.pi_c
        counter.merge(tm.counter)
    return arrays, vec, counter


@dataclass
class Components:
    """Cross-fitted estimates on a grid of times plus centered influence vectors.

    Array attributes indexed by time have length ``len(times)``; influence
    matrices have shape ``(n, len(times))``. Influence vectors are centered at
    the cross-fitted one-step estimates, so each column averages to zero.
    """

    times: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    psi_plug: np.ndarray
    psi_plus: np.ndarray
    tau: float
    tau_plug: float
    tau_plus: float
    theta_plug: np.ndarray
    eif_theta: np.ndarray
    eif_psi: np.ndarray
    eif_tau: np.ndarray
    fitted_survival: np.ndarray
    pi: np.ndarray
    pi_c: np.ndarray
    treatment: np.ndarray
    n: int
    clip: ClipCounter = field(default_factory=ClipCounter)
    propensity_clip_rate: float = 0.0

    @property
    def alpha(self) -> np.ndarray:
        a = self.treatment
        return a / self.pi - (1 - a) / self.pi_c

    def index(self, t) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} not in the estimation grid")
        return int(hits[0])

    def select(self, times) -> "Components":
        """Restrict to a subset of the estimation times."""
        j = [self.index(t) for t in np.atleast_1d(times)]
        return Components(self.times[j], self.theta[j], self.psi[j], self.psi_plug[j], self.psi_plus[j],
                          self.tau, self.tau_plug, self.tau_plus, self.theta_plug[j],
                          self.eif_theta[:, j], self.eif_psi[:, j], self.eif_tau, self.fitted_survival[:, j],
                          self.pi, self.pi_c, self.treatment, self.n, self.clip, self.propensity_clip_rate)

    def at(self, t) -> "Components":
        return self.select([t])

    def summary(self) -> dict:
        return {"times": self.times.tolist(), "theta": self.theta.tolist(), "psi": self.psi.tolist(),
                "psi_plus": self.psi_plus.tolist(), "tau": self.tau, "tau_plus": self.tau_plus, "n": self.n}


def components_from_fits(cross: CrossFit, times) -> Components:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise ValueError("evaluation times must be positive")
    arrays, vec, counter = _assemble(cross, times)
    theta = arrays["theta"].mean(axis=0)
    psi = arrays["psi"].mean(axis=0)
    psi_plug = arrays["psi_plug"].mean(axis=0)
    tau = float(vec["tau"].mean())
    tau_plug = float(vec["tau_plug"].mean())
    comp = Components(
        times=times, theta=theta, psi=psi, psi_plug=psi_plug,
        psi_plus=np.atleast_1d(positive_part(psi, psi_plug)),
        tau=tau, tau_plug=tau_plug, tau_plus=float(positive_part(tau, tau_plug)),
        theta_plug=arrays["theta_plug"].mean(axis=0),
        eif_theta=arrays["theta"] - theta, eif_psi=arrays["psi"] - psi, eif_tau=vec["tau"] - tau,
        fitted_survival=arrays["S"], pi=vec["pi"], pi_c=vec["pi_c"],
        treatment=cross.data.treatment.astype(float), n=cross.data.n, clip=counter,
        propensity_clip_rate=cross.propensity_clip_rate())
    return comp


def estimate_components(data: Dataset, folds: FoldAssignment, t, nuisance_config: NuisanceConfig | None = None,
                        clip_eps: float = 0.01, workers: int = 1) -> Components:
    """Cross-fitted one-step estimates of the survival difference, the residual
    outcome variance functional and the treatment-precision functional at
    each time in ``t``."""
    return components_from_fits(fit_cross(data, folds, nuisance_config, clip_eps, workers), t)


# ---------------------------------------------------------------------------
# bounds


@dataclass
class BoundsEstimate:
    t: float
    v: float
    theta: float
    psi_plus: float
    tau_plus: float
    lower: float
    upper: float
    var_lower: float
    var_upper: float
    cov_ul: float
    n: int
    eif_lower: np.ndarray = field(repr=False, default=None)
    eif_upper: np.ndarray = field(repr=False, default=None)
    degenerate: bool = False

    @property
    def half_width(self) -> float:
        return self.upper - self.theta

    def to_dict(self) -> dict:
        return {k: (float(getattr(self, k)) if k not in ("n", "degenerate") else getattr(self, k))
                for k in ("t", "v", "theta", "psi_plus", "tau_plus", "lower", "upper", "var_lower",
                          "var_upper", "cov_ul", "n", "degenerate")}


@dataclass
class BoundsGrid:
    """Bounds at every time of a grid for one (possibly time-varying) ``v``."""

    times: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    psi_plus: np.ndarray
    tau_plus: float
    lower: np.ndarray
    upper: np.ndarray
    eif_lower: np.ndarray   # (n, M)
    eif_upper: np.ndarray
    n: int
    degenerate: np.ndarray

    @property
    def var_lower(self):
        return np.mean(self.eif_lower ** 2, axis=0)

    @property
    def var_upper(self):
        return np.mean(self.eif_upper ** 2, axis=0)

    @property
    def cov_ul(self):
        return np.mean(self.eif_lower * self.eif_upper, axis=0)

    def __len__(self):
        return self.times.size

    def __getitem__(self, j: int) -> BoundsEstimate:
        return BoundsEstimate(float(self.times[j]), float(self.v[j]), float(self.theta[j]),
                              float(self.psi_plus[j]), float(self.tau_plus), float(self.lower[j]),
                              float(self.upper[j]), float(self.var_lower[j]), float(self.var_upper[j]),
                              float(self.cov_ul[j]), self.n, self.eif_lower[:, j], self.eif_upper[:, j],
                              bool(self.degenerate[j]))


def _bounds(theta, scale_psi, scale_tau, d_theta, d_psi, d_tau, v, n, times, rho_cap=1.0):
    """Shared bound arithmetic; ``scale_psi`` plays the role of psi (or gamma)."""
    M = np.size(theta)
    v = np.broadcast_to(np.asarray(v, dtype=float), (M,)).copy()
    if np.any(v < 0):
        raise ValueError("confounding level v must be nonnegative")
    if not 0 <= rho_cap <= 1:
        raise ValueError("rho_cap must lie in [0, 1]")
    v_eff = v * rho_cap ** 2
    prod = scale_psi * scale_tau
    half = np.sqrt(np.abs(v_eff) * prod)
    degenerate = (prod <= 0) & (v_eff > 0)
    if np.any(degenerate):
        warnings.warn("psi_plus * tau_plus = 0 with v > 0: bounds collapse to the point estimate",
                      DegenerateBoundsWarning, stacklevel=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(prod > 0, 0.5 * np.sqrt(np.abs(v_eff) / np.where(prod > 0, prod, 1.0)), 0.0)
    corr = factor * (scale_tau * d_psi + scale_psi * d_tau[:, None])
    return (v, theta - half, theta + half, d_theta - corr, d_theta + corr, degenerate)


def bounds_on_grid(components: Components, v, rho_cap: float = 1.0) -> BoundsGrid:
    """Lower/upper effect bounds ``theta -+ sqrt(v psi+ tau+)`` and their
    influence vectors at every time in ``components.times``.

    ``rho_cap`` (default 1) multiplies the half-width, modelling a known cap
    on the correlation between the outcome and treatment confounding parts.
    """
    c = components
    v, lo, up, el, eu, deg = _bounds(c.theta, c.psi_plus, c.tau_plus, c.eif_theta, c.eif_psi, c.eif_tau,
                                     v, c.n, c.times, rho_cap)
    return BoundsGrid(c.times, v, c.theta, c.psi_plus, c.tau_plus, lo, up, el, eu, c.n, deg)


def effect_bounds(components: Components, v: float, t: float | None = None, rho_cap: float = 1.0) -> BoundsEstimate:
    if t is not None:
        components = components.at(t)
    elif components.times.size != 1:
        raise ValueError("components span several times; pass t")
    return bounds_on_grid(components, v, rho_cap)[0]


def v_from_q(q):
    """Confounding level ``q^2 / (1 - q)`` implied by equal sensitivity parameters ``q``."""
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q >= 1)):
        raise ValueError("q must lie in [0, 1)")
    out = q ** 2 / (1 - q)
    return float(out) if out.ndim == 0 else out


def confounding_level(s_t, s_a):
    """``v = s_T s_A / (1 - s_A)``."""
    return s_t * s_a / (1 - s_a)


# ---------------------------------------------------------------------------
# restricted mean survival time


@dataclass
class RmstComponents:
    t: float
    grid: np.ndarray
    phi: float
    gamma: float
    gamma_plug: float
    gamma_plus: float
    tau: float
    tau_plus: float
    eif_phi: np.ndarray
    eif_gamma: np.ndarray
    eif_tau: np.ndarray
    n: int


@dataclass
class RmstBoundsEstimate:
    t: float
    v: float
    phi: float
    gamma_plus: float
    tau_plus: float
    lower: float
    upper: float
    var_lower: float
    var_upper: float
    cov_ul: float
    n: int
    eif_lower: np.ndarray = field(repr=False, default=None)
    eif_upper: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("t", "v", "phi", "gamma_plus", "tau_plus", "lower",
                                                     "upper", "var_lower", "var_upper", "cov_ul")}


def rmst_from_fits(cross: CrossFit, t: float, grid_resolution: int = 100) -> RmstComponents:
    if grid_resolution < 20:
        raise ValueError("grid_resolution must be at least 20")
    if not t > 0:
        raise ValueError("t must be positive")
    grid = np.linspace(0.0, t, grid_resolution)
    w = trapezoid_weights(grid)
    n = cross.data.n
    phi_i, gamma_i, gplug_i, tau_i, tplug_i = (np.zeros(n) for _ in range(5))
    for ev, tm in cross.terms(grid):
        r = rmst_terms(tm, w)
        phi_i[ev] = r["phi"]
        gamma_i[ev] = r["gamma"]
        gplug_i[ev] = r["gamma_plugin"]
        tau_i[ev] = tm.tau()
        tplug_i[ev] = tm.tau_plugin()
    phi, gamma, tau = phi_i.mean(), gamma_i.mean(), tau_i.mean()
    gamma_plug = max(float(gplug_i.mean()), 0.0)
    tau_plug = float(tplug_i.mean())
    return RmstComponents(float(t), grid, float(phi), float(gamma), gamma_plug,
                          float(positive_part(gamma, gamma_plug)), float(tau),
                          float(positive_part(tau, tau_plug)), phi_i - phi, gamma_i - gamma, tau_i - tau, n)


def rmst_components(data: Dataset, folds: FoldAssignment, t: float, grid_resolution: int = 100,
                    nuisance_config: NuisanceConfig | None = None, clip_eps: float = 0.01) -> RmstComponents:
    """Cross-fitted RMST-difference estimate and its residual-variance functional
    on ``[0, t]`` using a uniform trapezoid grid."""
    return rmst_from_fits(fit_cross(data, folds, nuisance_config, clip_eps), t, grid_resolution)


def rmst_bounds(rc: RmstComponents, v: float, rho_cap: float = 1.0) -> RmstBoundsEstimate:
    vv, lo, up, el, eu, _ = _bounds(np.array([rc.phi]), np.array([rc.gamma_plus]), rc.tau_plus,
                                    rc.eif_phi[:, None], rc.eif_gamma[:, None], rc.eif_tau, v, rc.n,
                                    np.array([rc.t]), rho_cap)
    el, eu = el[:, 0], eu[:, 0]
    return RmstBoundsEstimate(rc.t, float(vv[0]), rc.phi, rc.gamma_plus, rc.tau_plus, float(lo[0]), float(up[0]),
                              float(np.mean(el ** 2)), float(np.mean(eu ** 2)), float(np.mean(el * eu)),
                              rc.n, el, eu)
