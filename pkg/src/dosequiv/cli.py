"""Command-line interface: fit, test, calibrate, simulate, asymp.

Every command reads a JSON config (``--config``), optionally a dataset CSV
(``--data``), and writes its result to ``--out`` (JSON, or CSV for tabular
outputs).  Without ``--out`` the result goes to stdout; with ``--out`` stdout
stays silent and stderr carries human diagnostics.  ``--seed`` overrides the
config seed and ``--workers`` (default from ``DOSEQUIV_WORKERS``) controls
internal parallelism without changing any numeric output.

Exit codes are stable: 0 success, 2 config/schema violation, 3 data
validation failure, 4 estimation failure (non-convergence or constraint),
5 bootstrap/simulation failure, 1 unexpected error.

Results are byte-identical across reruns and worker counts except for the
``created_utc`` timestamp field (and the wall-clock ``runtime_s`` column of
simulation tables).
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .asymptotics import build_asymptotic_model, multi_point, sample_S, sample_T
from .bootstrap import (
    TestConfig,
    calibrate_delta,
    default_workers,
    empirical_quantile,
    test_many,
    test_many_iu,
    test_one,
)
from .design import RNG_SCHEME, load_csv
from .errors import (
    BootstrapError,
    ConfigError,
    ConstraintError,
    DataValidationError,
    DosequivError,
    FitConvergenceError,
    SimulationError,
)
from .estimate import fit_mle
from .models import evaluate
from .runconfig import (
    check_schema_version,
    load_json,
    parse_asymp_section,
    parse_calibrate_section,
    parse_design,
    parse_families,
    parse_models,
    parse_test_section,
)
from .simharness import emit_table, load_scenario, run_scenario

CURVE_GRID_POINTS = 101

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FIT = 4
EXIT_BOOTSTRAP = 5


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(text: str, out_path) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _fit_summary(fit, design):
    labels = design.labels or tuple(str(i + 1) for i in range(design.k))
    return [
        {
            "subgroup": l + 1,
            "label": labels[l],
            "family": fit.models[l].family.value,
            "param_names": list(fit.models[l].family.param_names),
            "params": [float(v) for v in fit.betas[l]],
            "hill": float(fit.models[l].hill),
            "sigma2": float(fit.sigma2[l]),
            "converged": bool(fit.converged[l]),
            "iterations": int(fit.iterations[l]),
        }
        for l in range(design.k)
    ]


def _test_block(result, alphas, include_values):
    values = result.distribution.values
    block = {
        "statistic": float(result.statistic),
        "p_value": float(result.p_value),
        "quantiles": {f"{a:g}": float(empirical_quantile(values, a)) for a in alphas},
        "reject": {f"{a:g}": bool(result.statistic < empirical_quantile(values, a)) for a in alphas},
        "failures": int(result.failures),
        "constrained": {
            "active": bool(result.constrained.active),
            "constraint_residual": float(result.constrained.constraint_residual),
            "beta_hathat": [[float(v) for v in b] for b in result.constrained.beta_hathat],
        },
    }
    if include_values:
        block["values_sorted"] = [float(v) for v in np.sort(values)]
    return block


def cmd_fit(args) -> int:
    raw = load_json(args.config)
    check_schema_version(raw, args.config)
    allowed = {"schema_version", "design", "families"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{args.config}: unknown key(s) {sorted(unknown)}")
    design = parse_design(raw["design"])
    families = parse_families(raw.get("families"), design.k)
    dataset = load_csv(args.data, design)
    fit = fit_mle(dataset, design, families)
    grid = np.linspace(design.doses[0], design.doses[-1], CURVE_GRID_POINTS)
    curves = {
        f"subgroup_{l + 1}": [float(v) for v in evaluate(fit.models[l], grid)]
        for l in range(design.k)
    }
    pop = np.zeros_like(grid)
    for l in range(design.k):
        pop = pop + design.weights[l] * evaluate(fit.models[l], grid)
    out = {
        "schema_version": 1,
        "command": "fit",
        "created_utc": _timestamp(),
        "rng": RNG_SCHEME,
        "config": raw,
        "data": str(args.data),
        "loglik": float(fit.loglik),
        "fits": _fit_summary(fit, design),
        "curves": {"doses": [float(d) for d in grid], **curves, "population": [float(v) for v in pop]},
    }
    _write(_dump_json(out), args.out)
    return 0


def cmd_test(args) -> int:
    raw = load_json(args.config)
    check_schema_version(raw, args.config)
    allowed = {"schema_version", "design", "families", "test"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{args.config}: unknown key(s) {sorted(unknown)}")
    design = parse_design(raw["design"])
    families = parse_families(raw.get("families"), design.k)
    section = parse_test_section(raw.get("test"), design.k)
    seed = section.seed if args.seed is None else args.seed
    dataset = load_csv(args.data, design)
    config = TestConfig(
        delta=section.delta, alpha=section.alphas[0], b=section.b, seed=seed,
        target=section.target,
    )
    out = {
        "schema_version": 1,
        "command": "test",
        "created_utc": _timestamp(),
        "rng": RNG_SCHEME,
        "config": raw,
        "data": str(args.data),
        "seed": seed,
        "alphas": [float(a) for a in section.alphas],
    }
    if section.iu:
        iu = test_many_iu(dataset, design, families, config, workers=args.workers)
        out["mode"] = "intersection_union"
        out["p_value"] = float(iu.p_value)
        out["reject"] = bool(iu.reject)
        out["per_subgroup"] = {
            str(sub): _test_block(res, section.alphas, section.include_values)
            for sub, res in zip(iu.subgroups, iu.results)
        }
    else:
        runner = test_one if section.target.kind == "one" else test_many
        result = runner(dataset, design, families, config, workers=args.workers)
        out["mode"] = section.target.kind
        out.update(_test_block(result, section.alphas, section.include_values))
        out["fit"] = {"loglik": float(result.fit.loglik), "fits": _fit_summary(result.fit, design)}
    _write(_dump_json(out), args.out)
    return 0


def cmd_calibrate(args) -> int:
    raw = load_json(args.config)
    check_schema_version(raw, args.config)
    allowed = {"schema_version", "design", "families", "calibrate"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{args.config}: unknown key(s) {sorted(unknown)}")
    design = parse_design(raw["design"])
    families = parse_families(raw.get("families"), design.k)
    section = parse_calibrate_section(raw.get("calibrate"), design.k)
    seed = section.seed if args.seed is None else args.seed
    dataset = load_csv(args.data, design)
    result = calibrate_delta(
        dataset, design, families, section.target, section.alpha, section.b, seed,
        section.deltas, workers=args.workers,
    )
    lines = ["delta,statistic,quantile,p_value,reject"]
    for p in result.points:
        lines.append(
            f"{p.delta:.17g},{result.statistic:.17g},{p.quantile:.17g},{p.p_value:.17g},"
            f"{int(p.reject)}"
        )
    _write("\n".join(lines) + "\n", args.out)
    summary = {
        "schema_version": 1,
        "command": "calibrate",
        "created_utc": _timestamp(),
        "config": raw,
        "data": str(args.data),
        "seed": seed,
        "statistic": float(result.statistic),
        "delta_hat": result.delta_hat,
        "monotone_violations": [float(d) for d in result.monotone_violations],
    }
    if args.out is not None:
        _write(_dump_json(summary), str(args.out) + ".summary.json")
    msg = (
        f"smallest rejecting threshold: {result.delta_hat}"
        if result.delta_hat is not None
        else "no rejection on the threshold grid"
    )
    print(msg, file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.config)
    if args.rows:
        scenario = scenario.subset([r.strip() for r in args.rows.split(";")])
    result = run_scenario(
        scenario,
        nsim=args.nsim,
        b=args.b,
        alpha=args.alpha,
        delta=args.delta,
        seed=0 if args.seed is None else args.seed,
        workers=args.workers,
    )
    csv_text, text = emit_table(result)
    _write(csv_text, args.out)
    if args.text:
        print(text, file=sys.stderr, end="")
    return 0


def cmd_asymp(args) -> int:
    raw = load_json(args.config)
    check_schema_version(raw, args.config)
    allowed = {"schema_version", "design", "models", "sigma2", "asymp"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{args.config}: unknown key(s) {sorted(unknown)}")
    design = parse_design(raw["design"])
    models = parse_models(raw.get("models"), design)
    sigma2 = np.asarray(raw.get("sigma2"), dtype=float)
    if sigma2.shape != (design.k,) or np.any(sigma2 <= 0):
        raise ConfigError("sigma2: expected one positive variance per subgroup")
    section = parse_asymp_section(raw.get("asymp"), design.k)
    seed = section.seed if args.seed is None else args.seed
    asym = build_asymptotic_model(design, models, sigma2, section.target)
    if section.target.kind == "one":
        samples = sample_T(asym, section.target.subgroups[0], section.draws, seed)
    else:
        samples = sample_S(asym, section.target.subgroups, section.draws, seed)
    out = {
        "schema_version": 1,
        "command": "asymp",
        "created_utc": _timestamp(),
        "rng": RNG_SCHEME,
        "config": raw,
        "seed": seed,
        "distance": float(asym.distance_value),
        "extremal_plus": [[int(i), float(d)] for i, d in asym.extremal_plus],
        "extremal_minus": [[int(i), float(d)] for i, d in asym.extremal_minus],
        "continuity_unverified": multi_point(asym),
        "n_draws": int(section.draws),
        "mean": float(samples.mean()),
        "sd": float(samples.std()),
        "quantiles": {f"{q:g}": float(np.quantile(samples, q)) for q in section.quantiles},
    }
    if section.include_samples:
        out["samples"] = [float(v) for v in samples]
    _write(_dump_json(out), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dosequiv",
        description="Equivalence tests between subgroup and population dose-response curves.",
    )
    parser.add_argument("--version", action="version", version=f"dosequiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", required=True, help="JSON config path")
        if data:
            p.add_argument("--data", required=True, help="dataset CSV path")
        p.add_argument("--out", default=None, help="output path (stdout if omitted)")
        p.add_argument("--workers", type=int, default=default_workers(),
                       help="worker processes (identical output for any count)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_fit = sub.add_parser("fit", help="maximum-likelihood fit per subgroup")
    common(p_fit, data=True)
    p_fit.set_defaults(func=cmd_fit)

    p_test = sub.add_parser("test", help="constrained parametric bootstrap test")
    common(p_test, data=True)
    p_test.set_defaults(func=cmd_test)

    p_cal = sub.add_parser("calibrate", help="p-value vs threshold curve and smallest rejecting threshold")
    common(p_cal, data=True)
    p_cal.set_defaults(func=cmd_calibrate)

    p_sim = sub.add_parser("simulate", help="rejection-rate simulation for a scenario file")
    common(p_sim)
    p_sim.add_argument("--nsim", type=int, default=500, help="simulated trials per row")
    p_sim.add_argument("--b", type=int, default=300, help="bootstrap replications per trial")
    p_sim.add_argument("--alpha", type=float, default=0.1, help="significance level")
    p_sim.add_argument("--delta", type=float, default=0.1, help="equivalence threshold")
    p_sim.add_argument("--rows", default=None, help="semicolon-separated row labels to run")
    p_sim.add_argument("--text", action="store_true", help="also print an aligned table to stderr")
    p_sim.set_defaults(func=cmd_simulate)

    p_asymp = sub.add_parser("asymp", help="sample the large-n limit variable")
    common(p_asymp)
    p_asymp.set_defaults(func=cmd_asymp)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitConvergenceError, ConstraintError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (BootstrapError, SimulationError) as exc:
        print(f"bootstrap error: {exc}", file=sys.stderr)
        return EXIT_BOOTSTRAP
    except DosequivError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
