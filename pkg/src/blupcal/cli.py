"""Command-line interface.

Subcommands::

    simulate  run a Monte Carlo study from a TOML config, emit CSV tables
    analyze   two-stage fit on real replicate + outcome CSV files
    compare   between-device agreement report
    oracle    analytic large-sample limits (optionally brute-force checked)

Exit codes: 0 success, 2 config/validation error, 3 data error,
4 partial scenario failure.  ``BLUPCAL_THREADS`` sets the simulate worker
count unless ``--threads`` is given.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agreement import compare_devices, report_as_dict
from .analytic_oracle import blup_slope_limit, brute_force_fit, naive_slope_limit
from .config import load_simulation_config
from .data_io import (
    FIGDATA_KEYS,
    SUMMARY_COLUMNS,
    align_outcomes,
    read_outcomes_csv,
    read_replicates_csv,
    write_csv,
)
from .errors import BlupcalError, ConfigError, DataError
from .lme import fit_reml_profiled
from .model_core import Scenario
from .sim_engine import run_monte_carlo
from .two_stage import PipelineSpec, estimate, spec_for_scenario

# The uncorrected gamma1=1 arm at rho=0.1, rho_xc=0 is pinned to the analytic
# attenuation limit; external reference tabulations give ~2.834 for that cell,
# a known divergence this harness documents instead of reproducing.
REFERENCE_NAIVE_G1_VALUE = 2.834


def _resolve_threads(arg_value) -> int:
    if arg_value is not None:
        value = arg_value
    else:
        raw = os.environ.get("BLUPCAL_THREADS")
        if raw is None:
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"BLUPCAL_THREADS: expected an integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"threads: must be >= 1, got {value}")
    return value


def _scenario_rows(scenario: Scenario, summaries) -> list[dict]:
    rows = []
    for s in summaries:
        for p in s.params:
            rows.append(
                {
                    "scenario_id": scenario.scenario_id,
                    "family": scenario.family,
                    "n": scenario.n,
                    "J": scenario.J,
                    "gamma1": scenario.gamma1,
                    "rho": scenario.rho,
                    "rho_xc": scenario.rho_xc,
                    "p_miss": scenario.p_miss,
                    "method": s.method,
                    "parameter": p.parameter,
                    "true_value": p.true_value,
                    "mean_estimate": p.mean_estimate,
                    "mean_asymptotic_se": p.mean_asymptotic_se,
                    "empirical_se": p.empirical_se,
                    "relative_bias_pct": p.relative_bias_pct,
                    "coverage_pct": p.coverage_pct,
                    "n_reps": s.n_reps,
                    "n_converged": s.n_converged,
                }
            )
    return rows


def _discrepancy_notes(scenarios, rows) -> list[dict]:
    """Flag naive gamma1=1 linear cells, which track the analytic limit
    rather than external reference tabulations."""
    notes = []
    by_id = {sc.scenario_id: sc for sc in scenarios}
    for row in rows:
        if (
            row["family"] == "linear"
            and row["method"] == "naive"
            and row["gamma1"] == 1.0
            and row["parameter"] == "beta_x"
        ):
            sc = by_id[row["scenario_id"]]
            limit = naive_slope_limit(sc)
            entry = {
                "scenario_id": row["scenario_id"],
                "method": "naive",
                "parameter": "beta_x",
                "mc_mean": row["mean_estimate"],
                "analytic_limit": limit,
                "text": (
                    "naive gamma1=1 arm: the Monte Carlo mean tracks the analytic "
                    f"attenuation limit {limit:.4f}, the value this harness pins."
                ),
            }
            if sc.rho == 0.1 and sc.rho_xc == 0.0:
                entry["reference_value"] = REFERENCE_NAIVE_G1_VALUE
                entry["text"] += (
                    f" External reference tabulations report ~{REFERENCE_NAIVE_G1_VALUE} for this "
                    "cell — a known divergence that is documented here, not reproduced."
                )
            notes.append(entry)
    return notes


def cmd_simulate(args) -> int:
    cfg = load_simulation_config(args.config)
    threads = _resolve_threads(args.threads)
    scenarios = cfg.scenarios()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: list[dict] = []
    failures: list[dict] = []
    for sc in scenarios:
        methods = [spec_for_scenario(sc, name) for name in cfg.methods]
        try:
            summaries = run_monte_carlo(sc, methods, n_workers=threads)
        except BlupcalError as exc:
            failures.append({"scenario_id": sc.scenario_id, "error": str(exc)})
            continue
        rows.extend(_scenario_rows(sc, summaries))

    write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, rows)
    bias_rows = [r for r in rows if r["parameter"] == "beta_x"]
    write_csv(
        out_dir / "figdata_bias.csv",
        FIGDATA_KEYS + ("relative_bias_pct",),
        bias_rows,
    )
    write_csv(
        out_dir / "figdata_coverage.csv",
        FIGDATA_KEYS + ("coverage_pct",),
        bias_rows,
    )

    report = {
        "config": cfg.source,
        "methods": list(cfg.methods),
        "n_scenarios": len(scenarios),
        "n_completed": len(scenarios) - len(failures),
        "failures": failures,
        "notes": _discrepancy_notes(scenarios, rows),
    }
    (out_dir / "run_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} summary rows for {len(scenarios)} scenarios to {out_dir}")
    if failures:
        print(f"{len(failures)} scenario(s) failed; see run_report.json", file=sys.stderr)
        return 4
    return 0


def _wald_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _p_label(p: float) -> str:
    if not np.isfinite(p):
        return "NA"
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def cmd_analyze(args) -> int:
    if args.gamma1 == 0:
        raise ConfigError("gamma1: must be nonzero")
    panel = read_replicates_csv(args.replicates)
    covariate_names = [c for c in (args.covariates.split(",") if args.covariates else []) if c]
    outcome_map = read_outcomes_csv(args.outcomes, args.outcome, covariate_names)
    panel, outcomes = align_outcomes(panel, outcome_map, covariate_names)

    if args.family == "logistic":
        try:
            outcomes.validate_binary()
        except ValueError as exc:
            raise DataError(f"{args.outcome}: {exc}")
        finite = outcomes.y[np.isfinite(outcomes.y)]
        if finite.size == 0 or finite.min() == finite.max():
            raise DataError(f"{args.outcome}: single-class logistic outcome")

    # stage 1 uses every aligned subject's replicates, even those later
    # dropped listwise for a missing outcome or covariate
    stage1 = fit_reml_profiled(panel)
    method = "blup_empirical" if args.method == "blup" else "naive"
    spec = PipelineSpec(method=method, family=args.family, gamma1=args.gamma1)
    fit = estimate(panel, outcomes, spec, stage1_fit=stage1)

    terms = ["intercept", "exposure", *covariate_names]
    coefficients = {}
    for i, term in enumerate(terms):
        est = float(fit.coefficients[i])
        se = float(fit.asymptotic_se[i])
        z = est / se if se > 0 else np.nan
        p = _wald_p(z) if np.isfinite(z) else np.nan
        coefficients[term] = {
            "estimate": est,
            "se": se,
            "ci_lower": float(fit.ci_lower[i]),
            "ci_upper": float(fit.ci_upper[i]),
            "p_value": None if not np.isfinite(p) else p,
            "p_value_label": _p_label(p),
        }

    result = {
        "method": args.method,
        "estimator": method,
        "family": args.family,
        "gamma1": args.gamma1,
        "outcome": args.outcome,
        "n_overlap": len(panel.subject_ids),
        "n_used": fit.n_used,
        "converged": bool(fit.converged),
        "coefficients": coefficients,
        "stage1": {
            "gamma0_hat": stage1.gamma0_hat,
            "tau2_hat": stage1.tau2_hat,
            "sigma2_hat": stage1.sigma2_hat,
            "log_restricted_likelihood": stage1.log_restricted_likelihood,
            "converged": stage1.converged,
            "n_iterations": stage1.n_iterations,
        },
        "notes": [
            "BLUP exposures are centered deviations from the fitted measurement mean; "
            "the intercept absorbs the exposure location.",
            "standard errors are stage-2 plug-in values; stage-1 estimation noise is not propagated.",
            "the exposure coefficient is per unit of the replicate measure; rescale units upstream.",
        ],
    }
    Path(args.out).write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def cmd_compare(args) -> int:
    panel_a = read_replicates_csv(args.device_a)
    panel_b = read_replicates_csv(args.device_b)
    report = compare_devices(panel_a, panel_b)
    Path(args.out).write_text(json.dumps(report_as_dict(report), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def cmd_oracle(args) -> int:
    cfg = load_simulation_config(args.config)
    scenarios = cfg.scenarios()
    brute_n = args.brute_force or 0
    if any(sc.family != "linear" for sc in scenarios) and not brute_n:
        raise ConfigError("closed-form limits cover the linear family; pass --brute-force N for logistic")

    header = ["scenario_id", "naive_bx", "blup_oracle_bx", "blup_oracle_bc", "blup_emp_bx", "blup_emp_bc"]
    if brute_n:
        header += ["bf_naive_bx", "bf_blup_oracle_bx", "bf_blup_emp_bx"]
    print("\t".join(header))
    for sc in scenarios:
        if sc.family == "linear":
            naive = f"{naive_slope_limit(sc):.4f}"
            obx, obc = blup_slope_limit(sc, "oracle")
            ebx, ebc = blup_slope_limit(sc, "empirical")
            cells = [naive, f"{obx:.4f}", f"{obc:.4f}", f"{ebx:.4f}", f"{ebc:.4f}"]
        else:
            cells = ["-"] * 5
        if brute_n:
            for name in ("naive", "blup_oracle", "blup_empirical"):
                fit = brute_force_fit(sc, spec_for_scenario(sc, name), n_override=brute_n)
                cells.append(f"{fit.coefficients[1]:.4f}")
        print("\t".join([sc.scenario_id, *cells]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blupcal",
        description="Two-stage BLUP correction for replicate exposure measurement error.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a TOML config")
    p.add_argument("--config", required=True, help="config path or bundled name (paper_continuous, paper_binary)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: BLUPCAL_THREADS or 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="two-stage fit on replicate + outcome CSV files")
    p.add_argument("--replicates", required=True, help="long-format CSV: subject_id,replicate_index,value")
    p.add_argument("--outcomes", required=True, help="CSV: subject_id,<outcome>,<covariates...>")
    p.add_argument("--family", required=True, choices=["linear", "logistic"])
    p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--covariates", default="", help="comma-separated covariate column names")
    p.add_argument("--gamma1", type=float, default=1.0, help="measurement scale factor (default 1)")
    p.add_argument("--method", required=True, choices=["blup", "naive"])
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="between-device agreement report")
    p.add_argument("--device-a", required=True, help="long-format replicates CSV for device A")
    p.add_argument("--device-b", required=True, help="long-format replicates CSV for device B")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="analytic large-sample limits for a config's scenarios")
    p.add_argument("--config", required=True, help="config path or bundled name")
    p.add_argument("--brute-force", type=int, default=0, metavar="N",
                   help="confirm limits with one N-subject replication (required for logistic)")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BlupcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
