"""Command-line interface: ``survsens analyze | benchmark | simulate``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import traceback
import warnings
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .data import CsvSchema, Dataset, check_feasible, load_csv, make_folds
from .estimation import (bounds_on_grid, components_from_fits, effect_bounds, fit_cross, rmst_bounds,
                         rmst_from_fits, v_from_q)
from .inference import default_band_grid, pointwise_ci, uniform_band
from .nuisance import Basis, NuisanceConfig
from .sensitivity import benchmark_from_fits, exceeds_threshold, leave_d_out_from_fits, sensitivity_report, umirv

SCHEMA_VERSION = "1.0.0"

_HINTS = {
    "data": "check the input path, column names and that time >= 0 and event/treatment are 0/1",
    "nuisance": "try --ridge or --propensity-ridge, fewer basis terms, or a Kaplan-Meier model",
    "eif": "check that the evaluation times lie inside the observed follow-up",
    "estimation": "reduce --folds or check that every fold has both arms and some events",
    "inference": "choose grid times with positive residual variance or fewer grid points",
    "sensitivity": "check --R / --d against the covariate names",
    "simulation": "check the study settings (sizes, replications, times)",
    "cli": "see `survsens <command> --help`",
}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _schema() -> dict:
    text = resources.files("survsens").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (repr(float(r[k])) if isinstance(r[k], (float, np.floating))
                                                        else r[k])) for k in columns})


def _created() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible reports
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.isoformat(timespec="seconds")


def _report(command: str, config: dict, data_block: dict | None, results: dict) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "created": _created(),
        "software": {"survsens": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "config": config,
        "data": data_block,
        "results": results,
    }
    rep = _clean(rep)
    jsonschema.validate(rep, _schema())
    return rep


def _load_data(args) -> tuple[Dataset, str]:
    if args.input == "demo":
        src = resources.files("survsens").joinpath("data/demo.csv")
        with resources.as_file(src) as path:
            covs = tuple(args.covariates) if args.covariates else ("W1", "W2")
            return load_csv(path, CsvSchema(args.time_col, args.event_col, args.trt_col, covs)), "demo"
    path = Path(args.input)
    covs = tuple(args.covariates or ())
    if not covs:
        if not path.is_file():
            raise UsageError(f"no such file: {path}")
        with path.open(encoding="utf-8") as fh:
            header = [h.strip() for h in fh.readline().split(",")]
        covs = tuple(h for h in header if h not in (args.time_col, args.event_col, args.trt_col))
    return load_csv(path, CsvSchema(args.time_col, args.event_col, args.trt_col, covs)), str(path)


def _data_block(data: Dataset, source: str) -> dict:
    return {"source": source, "n": data.n, "p": data.p, "covariates": list(data.covariate_names),
            "events": int(data.event.sum()), "treated": int(data.treatment.sum())}


def _nuisance_config(args) -> NuisanceConfig:
    return NuisanceConfig(survival=args.survival_model, censoring=args.censoring_model,
                          basis=Basis(sqrt=tuple(args.sqrt_terms or ())), ridge=args.ridge,
                          propensity_ridge=args.propensity_ridge, propensity_eps=args.propensity_eps)


def _parse_grid(spec: str | None, cross) -> np.ndarray | None:
    if spec is None:
        return None
    if spec == "auto":
        return default_band_grid(cross)
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError("--grid takes 'auto', 'start:stop:count' or a comma-separated list")
        lo, hi, m = float(parts[0]), float(parts[1]), int(parts[2])
        if not (0 < lo < hi) or m < 2:
            raise UsageError("--grid needs 0 < start < stop and count >= 2")
        return np.linspace(lo, hi, m)
    vals = np.array(sorted(float(x) for x in spec.split(",")))
    if vals.size < 2:
        raise UsageError("--grid needs at least two times")
    return vals


def _sensitivity_values(args) -> list[tuple[float, float | None]]:
    """List of ``(v, q)`` pairs; ``q`` is None when ``v`` was given directly.
    The no-confounding level ``v = 0`` is always first."""
    out = [(0.0, None)]
    for v in args.v or []:
        if v < 0:
            raise UsageError("--v values must be >= 0")
        if v > 0:
            out.append((float(v), None))
    for q in args.q or []:
        if not 0 <= q < 1:
            raise UsageError("--q values must lie in [0, 1)")
        out.append((float(v_from_q(q)), float(q)))
    return out


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def _folds_and_fits(args, data):
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    folds = make_folds(data.n, args.folds, args.seed, data)
    check_feasible(data, folds)
    cross = fit_cross(data, folds, _nuisance_config(args), args.clip_eps, args.threads)
    return folds, cross


def _diagnostics(cross, comp, folds, data, caught) -> dict:
    a = data.treatment
    return {
        "propensity_clip_rate": cross.propensity_clip_rate(),
        "censoring_clip": {"evaluated": comp.clip.evaluated, "clipped": comp.clip.clipped, "rate": comp.clip.rate},
        "fold_sizes": [{"fold": k, "n": int(idx.size), "treated": int(a[idx].sum()),
                        "control": int(idx.size - a[idx].sum())}
                       for k, _, idx in folds],
        "nuisance": cross.summaries(),
        "positive_part_psi": [bool(p <= 0) for p in comp.psi],
        "positive_part_tau": bool(comp.tau <= 0),
        "warnings": sorted({str(w.message) for w in caught}),
    }


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    if not args.t and not args.grid:
        raise UsageError("give at least one of --t or --grid")
    vq = _sensitivity_values(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data, source = _load_data(args)
        folds, cross = _folds_and_fits(args, data)
        grid = _parse_grid(args.grid, cross)
        t_values = np.array(sorted(set(args.t or [])), dtype=float)
        all_times = np.unique(np.r_[t_values, grid if grid is not None else []])
        comp = components_from_fits(cross, all_times)

        estimates, bound_rows = [], []
        for t in t_values:
            j = comp.index(t)
            estimates.append({"t": t, "theta": comp.theta[j], "theta_plugin": comp.theta_plug[j],
                              "psi": comp.psi[j], "psi_plus": comp.psi_plus[j], "tau": comp.tau,
                              "tau_plus": comp.tau_plus})
            for v, q in vq:
                b = effect_bounds(comp, v, t, args.rho_cap)
                ci = pointwise_ci(b, args.alpha, args.transformed, args.conservative)
                bound_rows.append({"estimand": "survival_difference", "t": t, "v": b.v, "q": q, "theta": b.theta,
                                   "lower": b.lower, "upper": b.upper,
                                   "se_lower": math.sqrt(b.var_lower / b.n), "se_upper": math.sqrt(b.var_upper / b.n),
                                   "ci_lower": ci.lower_limit, "ci_upper": ci.upper_limit, "critical": ci.critical,
                                   "ci_method": ci.method, "transformed": ci.transformed, "degenerate": b.degenerate})
        checks = {"v0_bounds_equal_theta": all(
            r["lower"] == r["theta"] == r["upper"] for r in bound_rows if r["v"] == 0)}

        rmst_rows = []
        if args.rmst:
            for t in t_values:
                rc = rmst_from_fits(cross, float(t), args.rmst_resolution)
                for v, q in vq:
                    rb = rmst_bounds(rc, v, args.rho_cap)
                    ci = pointwise_ci(rb, args.alpha, False, args.conservative)
                    rmst_rows.append({"estimand": "rmst_difference", "t": t, "v": rb.v, "q": q, "theta": rb.phi,
                                      "lower": rb.lower, "upper": rb.upper,
                                      "se_lower": math.sqrt(rb.var_lower / rb.n),
                                      "se_upper": math.sqrt(rb.var_upper / rb.n),
                                      "ci_lower": ci.lower_limit, "ci_upper": ci.upper_limit,
                                      "critical": ci.critical, "ci_method": ci.method, "transformed": False,
                                      "degenerate": False})

        bands, band_rows = [], []
        if grid is not None:
            sub = comp.select(grid)
            for v, q in vq:
                band = uniform_band(bounds_on_grid(sub, v, args.rho_cap), args.alpha, args.paths, args.seed,
                                    args.transformed)
                bands.append({"v": v, "q": q, "critical": band.critical, "transformed": band.transformed,
                              "grid": band.grid, "lower": band.lower, "upper": band.upper,
                              "lower_limit": band.lower_limit, "upper_limit": band.upper_limit})
                for k, t in enumerate(band.grid):
                    band_rows.append({"t": t, "v": v, "q": q, "lower": band.lower[k], "upper": band.upper[k],
                                      "band_lower": band.lower_limit[k], "band_upper": band.upper_limit[k],
                                      "critical": band.critical, "transformed": band.transformed})

        sens_rows = []
        u_value = None
        if grid is not None:
            u_value = umirv(comp.select(grid), args.theta0, args.alpha, args.paths, args.seed, rho_cap=args.rho_cap)
        for t in t_values:
            rep = sensitivity_report(comp, t, args.theta0, args.alpha, u_value, args.transformed)
            sens_rows.append({"t": t, "theta0": args.theta0, "alpha": args.alpha, "rv": rep.rv, "mirv": rep.mirv,
                              "umirv": u_value, "v_rv": rep.v_of_q["rv"], "v_mirv": rep.v_of_q["mirv"]})
        if not sens_rows and u_value is not None:
            sens_rows.append({"t": None, "theta0": args.theta0, "alpha": args.alpha, "rv": None, "mirv": None,
                              "umirv": u_value, "v_rv": None, "v_mirv": None})

    bound_cols = ["estimand", "t", "v", "q", "theta", "lower", "upper", "se_lower", "se_upper", "ci_lower",
                  "ci_upper", "critical", "ci_method", "transformed", "degenerate"]
    _write_csv(out / "bounds.csv", bound_rows + rmst_rows, bound_cols)
    _write_csv(out / "bands.csv", band_rows, ["t", "v", "q", "lower", "upper", "band_lower", "band_upper",
                                              "critical", "transformed"])
    _write_csv(out / "sensitivity.csv", sens_rows, ["t", "theta0", "alpha", "rv", "mirv", "umirv", "v_rv",
                                                    "v_mirv"])
    results = {"estimates": estimates, "bounds": bound_rows, "rmst": rmst_rows or None,
               "bands": bands or None, "sensitivity": sens_rows, "umirv": u_value, "checks": checks}
    _write_json(out / "report.json", _report("analyze", _config_echo(args), _data_block(data, source), results))
    _write_json(out / "diagnostics.json", _diagnostics(cross, comp, folds, data, caught))
    if not checks["v0_bounds_equal_theta"]:
        print("survsens: internal check failed: bounds at v=0 differ from the point estimate", file=sys.stderr)
        return 1
    print(f"wrote report to {out}")
    return 0


def cmd_benchmark(args) -> int:
    if not args.t:
        raise UsageError("benchmark needs --t")
    if (args.R is None) == (args.d is None):
        raise UsageError("give exactly one of --R or --d")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data, source = _load_data(args)
        folds, cross = _folds_and_fits(args, data)
        times = np.array(sorted(set(args.t)), dtype=float)
        full = components_from_fits(cross, times)
        thr = v_from_q(args.rv) if args.rv is not None else None
        rows, summary = [], []

        def row(kind, r):
            d = r.to_dict()
            d.update(kind=kind, R=";".join(r.R), threshold=thr,
                     exceeds=exceeds_threshold(r.s_combined, args.rv) if args.rv is not None else None)
            return d

        if args.R is not None:
            for r in benchmark_from_fits(cross, args.R, times, full):
                rows.append(row("benchmark", r))
        else:
            for t in times:
                res = leave_d_out_from_fits(cross, t, args.d, args.max_subsets, args.seed, full.at(t))
                rows += [row("subset", r) for r in res.results]
                mean_row = {"kind": "mean", "t": t, "d": args.d, "s_combined": res.mean, "q25": res.quartiles[0],
                            "q50": res.quartiles[1], "q75": res.quartiles[2], "se": res.se,
                            "exhaustive": res.exhaustive, "n_failed": res.n_failed, "threshold": thr,
                            "exceeds": (res.mean > thr) if thr is not None else None}
                rows.append(mean_row)
                summary.append(mean_row)
    cols = ["kind", "t", "R", "d", "s_T", "s_A", "s_A_raw", "s_combined", "s_combined_alt", "rho", "degenerate_rho",
            "theta", "theta_reduced", "q25", "q50", "q75", "se", "exhaustive", "n_failed", "threshold", "exceeds"]
    _write_csv(out / "benchmark.csv", rows, cols)
    results = {"benchmark": rows, "leave_d_out": summary or None,
               "comparison": {"rv": args.rv, "threshold": thr} if thr is not None else None}
    _write_json(out / "report.json", _report("benchmark", _config_echo(args), _data_block(data, source), results))
    _write_json(out / "diagnostics.json", _diagnostics(cross, full, folds, data, caught))
    print(f"wrote benchmark tables to {out}")
    return 0


_PROFILES = {"smoke": {"sizes": (500,), "replications": 50},
             "acceptance": {"sizes": (500, 1000), "replications": 200}}


def cmd_simulate(args) -> int:
    from .simulation import StudyConfig, compute_truth, run_study, study_checks

    prof = dict(_PROFILES.get(args.profile, {}))
    if args.n:
        prof["sizes"] = tuple(args.n)
    if args.reps is not None:
        prof["replications"] = args.reps
    if "sizes" not in prof or "replications" not in prof:
        raise UsageError("the custom profile needs --n and --reps")
    if any(n <= 0 for n in prof["sizes"]):
        raise UsageError("--n values must be positive")
    cfg = StudyConfig(sizes=tuple(int(n) for n in prof["sizes"]), replications=int(prof["replications"]),
                      alpha=args.alpha, folds=args.folds, n_paths=args.paths, master_seed=args.seed,
                      workers=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = compute_truth(cfg.all_times, args.truth_method, cfg.dgp)
    report = run_study(cfg, truth)
    report.write(out)
    checks = study_checks(report)
    _write_csv(out / "checks.csv", [c.__dict__ for c in checks], ["name", "passed", "detail"])
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    failures = sum(f["count"] for f in report.failures.values())
    results = {"checks": [c.__dict__ for c in checks], "replication_failures": report.failures,
               "metrics": report.to_dict()["metrics"]}
    _write_json(out / "report.json", _report("simulate", _config_echo(args), None, results))
    _write_json(out / "diagnostics.json", {"replication_failures": report.failures,
                                           "runtime_seconds": round(report.runtime, 3)})
    if failures:
        print(f"survsens: {failures} replications failed; see diagnostics.json", file=sys.stderr)
        return 1
    if args.profile == "acceptance" and not all(c.passed for c in checks):
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose 'config' block supplies defaults (e.g. a previous report.json)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="maximum worker processes")
    p.add_argument("--out-dir", default="survsens-out")
    p.add_argument("--paths", type=int, default=5000, help="Gaussian paths for uniform bands")


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=False, default="demo", help="CSV path or 'demo' for the bundled dataset")
    p.add_argument("--time-col", default="time")
    p.add_argument("--event-col", default="event")
    p.add_argument("--trt-col", default="treatment")
    p.add_argument("--covariates", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   help="comma-separated covariate columns (default: all other columns)")
    p.add_argument("--t", type=float, nargs="+", help="evaluation times")
    p.add_argument("--survival-model", choices=("cox", "cox-stratified", "km"), default="cox")
    p.add_argument("--censoring-model", choices=("cox", "cox-stratified", "km"), default="cox")
    p.add_argument("--sqrt-terms", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   help="covariates that also enter through their square root")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--propensity-ridge", type=float, default=0.0)
    p.add_argument("--propensity-eps", type=float, default=0.01)
    p.add_argument("--clip-eps", type=float, default=0.01, help="floor for the censoring survival")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survsens", description=__doc__)
    parser.add_argument("--version", action="version", version=f"survsens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="bounds, intervals, bands and robustness values")
    _common(a)
    _data_args(a)
    a.add_argument("--grid", help="band grid: 'auto', 'start:stop:count' or comma-separated times")
    a.add_argument("--v", type=float, nargs="+", help="sensitivity levels v")
    a.add_argument("--q", type=float, nargs="+", help="common sensitivity parameters q (v = q^2/(1-q))")
    a.add_argument("--transformed", action="store_true", help="intervals on the 2*artanh scale")
    a.add_argument("--conservative", action="store_true", help="ignore the lower/upper covariance")
    a.add_argument("--rmst", action="store_true", help="add restricted-mean bounds on [0, t]")
    a.add_argument("--rmst-resolution", type=int, default=100)
    a.add_argument("--rho-cap", type=float, default=1.0, help="bound on |rho|; v is scaled by rho_cap^2")
    a.add_argument("--theta0", type=float, default=0.0, help="null value for robustness values")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("benchmark", help="observed confounding by covariate subsets")
    _common(b)
    _data_args(b)
    b.add_argument("--R", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   help="comma-separated covariates to drop")
    b.add_argument("--d", type=int, help="leave-d-out subset size")
    b.add_argument("--max-subsets", type=int, default=100)
    b.add_argument("--rv", type=float, help="robustness value q to compare against")
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("simulate", help="replication study on the built-in data-generating process")
    _common(s)
    s.add_argument("--profile", choices=("smoke", "acceptance", "custom"), default="smoke")
    s.add_argument("--n", type=int, nargs="+", help="sample sizes")
    s.add_argument("--reps", type=int, help="replications per sample size")
    s.add_argument("--truth-method", choices=("quadrature", "monte-carlo"), default="quadrature")
    s.set_defaults(func=cmd_simulate, seed=20240601, paths=2000)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    blob = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = blob.get("config", blob)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    sub.set_defaults(**{k: v for k, v in cfg.items() if k in known and k not in ("config", "command")})
    return parser.parse_args(argv)


def _module_of(exc: BaseException) -> str:
    pkg = Path(__file__).parent
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        p = Path(frame.filename)
        if p.parent == pkg:
            return p.stem
    return "cli"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        return int(args.func(args))
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:
        mod = "cli" if isinstance(exc, UsageError) else _module_of(exc)
        print(f"survsens: error in {mod}: {exc}", file=sys.stderr)
        print(f"  hint: {_HINTS.get(mod, _HINTS['cli'])}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
