"""Batch command-line front end.

Subcommands run one experiment or check each and drop three files into the
output directory: ``results.csv`` (tidy per-row data), ``summary.json``
(effective config, version, wall-clock seconds and the headline statistic)
and ``config-echo.json`` (the effective config alone).  CSV bodies are byte
identical across reruns of the same config and seed; timestamps live only in
summary.json.

Exit codes: 0 success, 1 numerical/acceptance failure (with ``--assert``),
2 usage or config error.  The default output directory is
``$SKGLASS_OUTPUT_DIR`` (or ``./results``) plus the subcommand name.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .core_model import ModelParams, derive_seed, sample_disorder
from .experiments import (
    ExperimentConfig,
    ScalingReport,
    check_fundamental_identity,
    check_interpolation_covariances,
    check_interpolation_derivative,
    check_q_minus,
    make_interpolation_probe,
    run_cavity_clt,
    run_centered_cavity_clt,
    run_local_clt,
    run_overlap_concentration,
    run_tap_residual,
)
from .theory import FixedPointError, Polynomial, TestFunction, solve_q

OUTPUT_DIR_ENV = "SKGLASS_OUTPUT_DIR"

SCALING_CSV_HEADER = ["N", "M", "k", "moment", "ci_low", "ci_high", "ks_median"]

# default slope acceptance bands per moment order k (one-sided theory bound
# N^{-k} plus a sanity floor); overridable via the config's "acceptance" block
SLOPE_BANDS = {1: (-1.4, -0.6), 2: (-2.8, -1.2)}


def _slope_band(k: int) -> tuple:
    return SLOPE_BANDS.get(k, (-1.4 * k, -0.6 * k))


def version_string() -> str:
    """Package version, annotated git-describe style when inside a checkout."""
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"{__version__}+g{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _out_dir(args, subcommand: str) -> Path:
    base = args.out or os.environ.get(OUTPUT_DIR_ENV) or "results"
    path = Path(base) / subcommand
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: List[str], rows: List[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _scaling_rows(report: ScalingReport) -> List[list]:
    return [
        [
            row.n_spins,
            row.n_samples,
            report.k,
            _fmt(row.moment),
            _fmt(row.ci_low),
            _fmt(row.ci_high),
            _fmt(row.ks_median),
        ]
        for row in report.rows
    ]


def _report_summary(report: ScalingReport) -> dict:
    return {
        "statistic": report.statistic,
        "k": report.k,
        "slope": report.slope,
        "intercept": report.intercept,
        "slope_se": report.slope_se,
        "extras": report.extras,
        "moments": {str(row.n_spins): row.moment for row in report.rows},
    }


def _emit(
    args,
    subcommand: str,
    effective_config: dict,
    csv_header: List[str],
    csv_rows: List[list],
    headline: dict,
    wall_seconds: float,
    extra_summary: Optional[dict] = None,
) -> Path:
    out = _out_dir(args, subcommand)
    _write_csv(out / "results.csv", csv_header, csv_rows)
    _write_json(out / "config-echo.json", effective_config)
    summary = {
        "subcommand": subcommand,
        "version": version_string(),
        "wall_seconds": wall_seconds,
        "config": effective_config,
        "headline": headline,
    }
    if extra_summary:
        summary.update(extra_summary)
    _write_json(out / "summary.json", summary)
    return out


def _fail_assertions(failures: List[str]) -> int:
    for failure in failures:
        print(f"ASSERTION FAILED: {failure}", file=sys.stderr)
    return 1 if failures else 0


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _experiment_config(args, file_cfg: dict, defaults: dict) -> ExperimentConfig:
    spec = dict(defaults)
    spec.update({k: v for k, v in file_cfg.items() if k != "acceptance"})
    overrides = {
        "beta": args.beta,
        "h": args.h,
        "k": getattr(args, "k", None),
        "master_seed": args.seed,
        "backend": getattr(args, "backend", None),
        "n_disorder_samples": getattr(args, "samples", None),
        "quad_order": getattr(args, "quad_order", None),
        "workers": getattr(args, "workers", None),
    }
    if getattr(args, "n_grid", None):
        overrides["n_grid"] = [int(v) for v in args.n_grid.split(",")]
    if getattr(args, "test_function", None):
        overrides["test_function"] = json.loads(args.test_function)
    spec.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(spec)


def _acceptance(file_cfg: dict) -> dict:
    return dict(file_cfg.get("acceptance", {}))


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_solve_q(args) -> int:
    file_cfg = _load_config_file(args.config)
    beta = args.beta if args.beta is not None else file_cfg.get("beta", 0.3)
    h = args.h if args.h is not None else file_cfg.get("h", 0.3)
    tol = args.tol if args.tol is not None else file_cfg.get("tol", 1e-13)
    quad_order = args.quad_order or file_cfg.get("quad_order", 40)
    effective = {"beta": beta, "h": h, "tol": tol, "quad_order": quad_order}
    start = time.perf_counter()
    constants = solve_q(beta, h, tol=tol, quad_order=quad_order)
    wall = time.perf_counter() - start
    rows = [[_fmt(beta), _fmt(h), _fmt(constants.q), _fmt(constants.residual)]]
    _emit(
        args,
        "solve-q",
        effective,
        ["beta", "h", "q", "residual"],
        rows,
        {"q": constants.q, "residual": constants.residual},
        wall,
    )
    print(f"q({beta}, {h}) = {constants.q:.15g}  residual {constants.residual:.3g}")
    if args.assert_bands:
        bound = _acceptance(file_cfg).get("max_residual", 1e-12)
        if constants.residual >= bound:
            return _fail_assertions(
                [f"fixed-point residual {constants.residual:.3g} >= {bound:.3g}"]
            )
    return 0


def _run_scaling_command(args, subcommand: str, runner, defaults: dict) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _experiment_config(args, file_cfg, defaults)
    start = time.perf_counter()
    report = runner(cfg)
    wall = time.perf_counter() - start
    _emit(
        args,
        subcommand,
        cfg.to_dict(),
        SCALING_CSV_HEADER,
        _scaling_rows(report),
        _report_summary(report),
        wall,
    )
    slope_text = "n/a" if report.slope is None else f"{report.slope:.4f}"
    print(f"{subcommand}: slope {slope_text} over N = {list(cfg.n_grid)} ({wall:.1f}s)")
    if args.assert_bands:
        acc = _acceptance(file_cfg)
        lo, hi = _slope_band(cfg.k)
        lo = acc.get("slope_min", lo)
        hi = acc.get("slope_max", hi)
        failures = []
        if report.slope is None:
            failures.append("no slope could be fitted (zero moments)")
        elif not lo <= report.slope <= hi:
            failures.append(f"slope {report.slope:.4f} outside [{lo}, {hi}]")
        norm_bound = acc.get("mixture_norm_max_err", 1e-10)
        norm_err = report.extras.get("mixture_norm_max_err")
        if norm_err is not None and norm_err > norm_bound:
            failures.append(
                f"mixture normalization error {norm_err:.3g} > {norm_bound:.3g}"
            )
        return _fail_assertions(failures)
    return 0


def _cmd_verify_cavity(args) -> int:
    return _run_scaling_command(args, "verify-cavity", run_cavity_clt, _CLT_DEFAULTS)


def _cmd_verify_cavity_centered(args) -> int:
    return _run_scaling_command(
        args, "verify-cavity-centered", run_centered_cavity_clt, _CLT_DEFAULTS
    )


def _cmd_verify_local(args) -> int:
    def runner(cfg):
        return run_local_clt(cfg, site=args.site)

    return _run_scaling_command(args, "verify-local", runner, _CLT_DEFAULTS)


def _cmd_verify_tap(args) -> int:
    def runner(cfg):
        return run_tap_residual(cfg, site=args.site)

    return _run_scaling_command(args, "verify-tap", runner, _TAP_DEFAULTS)


def _cmd_verify_overlap(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _experiment_config(args, file_cfg, _OVERLAP_DEFAULTS)
    start = time.perf_counter()
    reports = run_overlap_concentration(cfg)
    wall = time.perf_counter() - start
    rows = []
    for name, report in reports.items():
        for row in _scaling_rows(report):
            rows.append([name] + row)
    _emit(
        args,
        "verify-overlap",
        cfg.to_dict(),
        ["statistic"] + SCALING_CSV_HEADER,
        rows,
        {name: _report_summary(rep) for name, rep in reports.items()},
        wall,
    )
    slopes = {name: rep.slope for name, rep in reports.items()}
    print(f"verify-overlap: slopes {slopes} ({wall:.1f}s)")
    if args.assert_bands:
        acc = _acceptance(file_cfg)
        lo = acc.get("slope_min", -1.4)
        hi = acc.get("slope_max", -0.6)
        failures = [
            f"{name}: slope {slope} outside [{lo}, {hi}]"
            for name, slope in slopes.items()
            if slope is None or not lo <= slope <= hi
        ]
        return _fail_assertions(failures)
    return 0


def _cmd_check_identity(args) -> int:
    file_cfg = _load_config_file(args.config)
    n = args.n or file_cfg.get("n", 12)
    beta = args.beta if args.beta is not None else file_cfg.get("beta", 0.45)
    h = args.h if args.h is not None else file_cfg.get("h", 1.0)
    instances = args.instances or file_cfg.get("instances", 20)
    seed = args.seed if args.seed is not None else file_cfg.get("master_seed", 20250809)
    effective = {"n": n, "beta": beta, "h": h, "instances": instances, "master_seed": seed}
    params = ModelParams(n_spins=n, beta=beta, h=h)
    start = time.perf_counter()
    rows = []
    worst = 0.0
    for idx in range(instances):
        disorder = sample_disorder(params, derive_seed(seed, f"disorder:{n}", idx))
        residual = check_fundamental_identity(params, disorder)
        worst = max(worst, residual)
        rows.append([idx, _fmt(residual)])
    wall = time.perf_counter() - start
    _emit(
        args,
        "check-identity",
        effective,
        ["instance", "max_site_residual"],
        rows,
        {"max_residual": worst},
        wall,
    )
    print(f"check-identity: max residual {worst:.3g} over {instances} instances")
    if args.assert_bands:
        bound = _acceptance(file_cfg).get("max_residual", 1e-10)
        if worst > bound:
            return _fail_assertions([f"identity residual {worst:.3g} > {bound:.3g}"])
    return 0


def _cmd_check_interpolation(args) -> int:
    file_cfg = _load_config_file(args.config)
    n = args.n or file_cfg.get("n", 8)
    beta = args.beta if args.beta is not None else file_cfg.get("beta", 0.3)
    h = args.h if args.h is not None else file_cfg.get("h", 0.3)
    t = args.t if args.t is not None else file_cfg.get("t", 0.25)
    mc = args.mc_samples or file_cfg.get("mc_samples", 1_000_000)
    seed = args.seed if args.seed is not None else file_cfg.get("master_seed", 20250809)
    deriv_n = args.deriv_n or file_cfg.get("deriv_n", 6)
    deriv_t = args.deriv_t if args.deriv_t is not None else file_cfg.get("deriv_t", 0.5)
    dt = args.dt if args.dt is not None else file_cfg.get("dt", 0.05)
    effective = {
        "n": n, "beta": beta, "h": h, "t": t, "mc_samples": mc,
        "deriv_n": deriv_n, "deriv_t": deriv_t, "dt": dt, "master_seed": seed,
    }
    start = time.perf_counter()
    params = ModelParams(n_spins=n, beta=beta, h=h)
    disorder = sample_disorder(params, derive_seed(seed, f"disorder:{n}", 0))
    probe = make_interpolation_probe(params, disorder, t, derive_seed(seed, "probe"))
    cov = check_interpolation_covariances(probe, params, disorder, mc)

    dparams = ModelParams(n_spins=deriv_n, beta=beta, h=h)
    ddisorder = sample_disorder(dparams, derive_seed(seed, f"disorder:{deriv_n}", 1))
    deriv = check_interpolation_derivative(
        dparams, ddisorder, Polynomial((0.0, 0.0, 1.0)), deriv_t, dt, mc,
        seed=derive_seed(seed, "derivative"),
    )
    wall = time.perf_counter() - start
    rows = [
        [row.name, _fmt(row.estimate), _fmt(row.closed_form), _fmt(row.se), _fmt(row.deviation_se)]
        for row in cov.rows
    ]
    rows.append(
        [
            "dphi/dt",
            _fmt(deriv.finite_difference),
            _fmt(deriv.lemma_rhs),
            _fmt(deriv.diff_se),
            _fmt(deriv.deviation_se),
        ]
    )
    headline = {
        "max_covariance_deviation_se": cov.max_deviation_se(),
        "derivative_deviation_se": deriv.deviation_se,
    }
    _emit(
        args,
        "check-interpolation",
        effective,
        ["identity", "estimate", "closed_form", "se", "deviation_se"],
        rows,
        headline,
        wall,
        extra_summary={"derivative": asdict(deriv)},
    )
    print(
        "check-interpolation: covariances within "
        f"{cov.max_deviation_se():.2f} SE, derivative within {deriv.deviation_se:.2f} SE"
    )
    if args.assert_bands:
        bound = _acceptance(file_cfg).get("max_deviation_se", 4.0)
        failures = []
        if cov.max_deviation_se() > bound:
            failures.append(f"covariance identity off by {cov.max_deviation_se():.2f} SE")
        if deriv.deviation_se > bound:
            failures.append(f"derivative identity off by {deriv.deviation_se:.2f} SE")
        return _fail_assertions(failures)
    return 0


def _cmd_check_qminus(args) -> int:
    file_cfg = _load_config_file(args.config)
    beta = args.beta if args.beta is not None else file_cfg.get("beta", 0.4)
    h = args.h if args.h is not None else file_cfg.get("h", 0.5)
    if args.n_grid:
        grid = [int(v) for v in args.n_grid.split(",")]
    else:
        grid = file_cfg.get("n_grid", [10, 100, 1000, 10000])
    effective = {"beta": beta, "h": h, "n_grid": grid}
    start = time.perf_counter()
    table = check_q_minus(beta, h, grid)
    wall = time.perf_counter() - start
    gaps = [row.scaled_gap for row in table]
    spread = max(gaps) / min(gaps) if min(gaps) > 0 else float("inf")
    rows = [
        [row.n_spins, _fmt(row.q), _fmt(row.q_minus), _fmt(row.scaled_gap)]
        for row in table
    ]
    _emit(
        args,
        "check-qminus",
        effective,
        ["N", "q", "q_minus", "scaled_gap"],
        rows,
        {"max_scaled_gap": max(gaps), "min_scaled_gap": min(gaps), "spread": spread},
        wall,
    )
    print(f"check-qminus: N|q - q_minus| in [{min(gaps):.4g}, {max(gaps):.4g}]")
    if args.assert_bands:
        bound = _acceptance(file_cfg).get("max_spread", 2.0)
        if not spread < bound:
            return _fail_assertions(
                [f"scaled gap spread {spread:.3g} not below {bound}"]
            )
    return 0


_CLT_DEFAULTS = {
    "beta": 0.3,
    "h": 0.3,
    "k": 1,
    "n_grid": [8, 10, 12, 14, 16, 18, 20],
    "n_disorder_samples": 400,
    "test_function": {"kind": "cosine", "frequency": 1.0},
}
_TAP_DEFAULTS = dict(_CLT_DEFAULTS)
_OVERLAP_DEFAULTS = dict(_CLT_DEFAULTS)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file mirroring the experiment fields")
    sub.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./results)")
    sub.add_argument("--beta", type=float, default=None)
    sub.add_argument("--h", type=float, default=None)
    sub.add_argument("--seed", type=int, default=None, help="master seed")
    sub.add_argument(
        "--assert",
        dest="assert_bands",
        action="store_true",
        help="turn acceptance bands into exit-code failures",
    )


def _add_experiment_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--k", type=int, default=None, help="moment order is 2k")
    sub.add_argument("--backend", choices=["exact", "mcmc"], default=None)
    sub.add_argument("--n-grid", default=None, help="comma-separated N values")
    sub.add_argument("--samples", type=int, default=None, help="disorder samples per N")
    sub.add_argument("--quad-order", type=int, default=None)
    sub.add_argument("--workers", type=int, default=None, help="worker pool size")
    sub.add_argument(
        "--test-function",
        default=None,
        help='JSON test function, e.g. {"kind":"cosine","frequency":1.0}',
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skglass",
        description="High-temperature SK model: scaling experiments and exact identity checks.",
    )
    parser.add_argument("--version", action="version", version=version_string())
    subparsers = parser.add_subparsers(dest="command")

    sq = subparsers.add_parser("solve-q", help="solve q = E tanh^2(beta z sqrt(q) + h)")
    _add_common(sq)
    sq.add_argument("--tol", type=float, default=None)
    sq.add_argument("--quad-order", type=int, default=None)
    sq.set_defaults(func=_cmd_solve_q)

    for name, handler, extra_site in (
        ("verify-cavity", _cmd_verify_cavity, False),
        ("verify-cavity-centered", _cmd_verify_cavity_centered, False),
        ("verify-local", _cmd_verify_local, True),
        ("verify-tap", _cmd_verify_tap, True),
    ):
        sub = subparsers.add_parser(name, help=f"{name} scaling experiment")
        _add_common(sub)
        _add_experiment_flags(sub)
        if extra_site:
            sub.add_argument("--site", type=int, default=1, help="1-based site")
        sub.set_defaults(func=handler)

    ov = subparsers.add_parser("verify-overlap", help="overlap/T-statistic concentration")
    _add_common(ov)
    _add_experiment_flags(ov)
    ov.set_defaults(func=_cmd_verify_overlap)

    ci = subparsers.add_parser("check-identity", help="fundamental identity residuals")
    _add_common(ci)
    ci.add_argument("--n", type=int, default=None)
    ci.add_argument("--instances", type=int, default=None)
    ci.set_defaults(func=_cmd_check_identity)

    cp = subparsers.add_parser("check-interpolation", help="interpolation identities")
    _add_common(cp)
    cp.add_argument("--n", type=int, default=None)
    cp.add_argument("--t", type=float, default=None)
    cp.add_argument("--mc-samples", type=int, default=None)
    cp.add_argument("--deriv-n", type=int, default=None)
    cp.add_argument("--deriv-t", type=float, default=None)
    cp.add_argument("--dt", type=float, default=None)
    cp.set_defaults(func=_cmd_check_interpolation)

    cq = subparsers.add_parser("check-qminus", help="q vs q_minus boundedness table")
    _add_common(cq)
    cq.add_argument("--n-grid", default=None, help="comma-separated N values")
    cq.set_defaults(func=_cmd_check_qminus)

    return parser


def dispatch(argv) -> int:
    """Parse arguments and run a subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FixedPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


def main() -> None:  # pragma: no cover - thin wrapper
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":  # pragma: no cover
    main()
