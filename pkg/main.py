#  NEYMAN-SCOTT PANEL MODEL LAB
#    1. generate   - simulate a panel x_it = mu_t + eps_it and save it (CSV + JSON sidecar)
#    2. estimate   - naive MLE (closed form or Newton) or the recast contrast MLE of sigma2
#    3. experiment - Monte Carlo checks of bias, inconsistency, consistency and efficiency
#
#  Exit codes: 0 success, 1 runtime / I/O / malformed data, 2 usage / config.

import argparse
import json
import logging
import sys

from config import (
    CONFIG_VERSION,
    DEFAULT_M,
    DEFAULT_MASTER_SEED,
    DEFAULT_N_MAX,
    DEFAULT_SCHEME,
    DEFAULT_SIGMA2,
    GRAD_TOL,
    LOG_LEVEL,
    MAX_ITER,
    MIN_SIGMA2,
    STEP_SHRINK,
)
from likelihood import mle_closed_form, second_order_check
from model_core import as_scheme, generate_panel, make_spec, parse_scheme, scheme_label
from montecarlo import (
    ExperimentConfig,
    bias_verdicts,
    experiment_report,
    incidental_verdicts,
    path_report,
    path_verdicts,
    run_bias_experiment,
    run_consistency_sweep,
    run_incidental_mean_experiment,
    run_sample_path,
    sweep_verdicts,
    thin_information_diagnostic,
)
from optimizer import OptimizerConfig, maximize_naive_likelihood
from processor import (
    read_panel,
    sidecar_path,
    write_contrasts,
    write_panel,
    write_report,
    write_sample_path,
    write_summaries,
)
from recast import contrast_transform, fisher_information_sigma2, sigma2_mle_recast
from utils import ConfigError, PanelFormatError, read_json, resolve_output_path, write_json

logger = logging.getLogger("neyman_scott")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
IDENTITY_TOL = 1e-12

SCHEME_HELP = """\
mean schemes (--scheme):
  constant:<c>            mu_t = c
  linear:<a>,<b>          mu_t = a + b*t, t = 1..n   (default linear:0,1)
  explicit:@<file>        mu_t read from a file (numbers, or a JSON list)
  explicit:<v1>,<v2>,...  mu_t given inline
  randomwalk:<sd>[,<seed>] mu_t = cumulative sum of Normal(0, sd^2) steps

environment:
  NS_OUTPUT_DIR  directory for relative output paths
  NS_LOG_LEVEL   default --log-level
"""


def _usage_error(parser, err):
    parser.print_usage(sys.stderr)
    print(f"{parser.prog}: error: {err}", file=sys.stderr)
    return EXIT_USAGE


def _runtime_error(err):
    print(f"error: {err}", file=sys.stderr)
    return EXIT_RUNTIME


def _int_list(text, name):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"{name} must be a comma separated list of integers, got '{text}'") from e


#  GENERATE
def cmd_generate(args, parser):
    try:
        spec = make_spec(args.m, args.n, args.sigma2, parse_scheme(args.scheme))
    except ValueError as e:
        return _usage_error(parser, e)

    panel = generate_panel(spec, args.seed)
    try:
        csv_path, side = write_panel(resolve_output_path(args.output), panel)
    except OSError as e:
        return _runtime_error(f"cannot write panel: {e}")
    print(f"Panel (m={spec.m}, n={spec.n}, sigma2={spec.sigma2!r}, {scheme_label(spec.scheme)}, seed={args.seed}) written to {csv_path}")
    print(f"Spec and seed saved to {side}")
    return EXIT_OK


#  ESTIMATE
def _naive_report(theta, panel):
    out = {
        "sigma2_hat": theta.sigma2,
        "mu_hat": [float(v) for v in theta.mu_hat],
        "degenerate": theta.degenerate,
    }
    if theta.degenerate:
        out["second_order"] = None
    else:
        out["second_order"] = second_order_check(theta, panel).to_dict()
    return out


def cmd_estimate(args, parser):
    try:
        opt_config = OptimizerConfig(args.grad_tol, args.max_iter, args.step_shrink, args.min_sigma2)
    except ValueError as e:
        return _usage_error(parser, e)

    try:
        panel = read_panel(args.panel)
    except PanelFormatError as e:
        return _runtime_error(f"{args.panel}: {e}")
    except (OSError, ValueError) as e:
        return _runtime_error(f"cannot read {args.panel}: {e}")

    report = {
        "file": args.panel,
        "method": args.method,
        "m": panel.m,
        "n": panel.n,
        "seed": panel.seed,
    }
    theta, _ = mle_closed_form(panel)

    if args.method == "closed":
        report.update(_naive_report(theta, panel))
    elif args.method == "newton":
        result = maximize_naive_likelihood(panel, None, opt_config)
        report.update(_naive_report(result.theta, panel))
        report["optimizer"] = result.to_dict()
        report["closed_form_sigma2"] = theta.sigma2
        report["max_abs_diff_vs_closed_form"] = float(
            abs(result.theta.to_vector() - theta.to_vector()).max()
        )
    else:
        series = contrast_transform(panel)
        est = sigma2_mle_recast(series)
        m = panel.m
        implied = m / (m - 1) * theta.sigma2
        scale = max(abs(implied), abs(est.sigma2_hat))
        rel = abs(implied - est.sigma2_hat) / scale if scale > 0 else 0.0
        report["recast"] = est.to_dict()
        report["fisher_information"] = (
            fisher_information_sigma2(est.sigma2_hat, est.n_eff) if not est.degenerate else None
        )
        report["identity_check"] = {
            "naive_sigma2": theta.sigma2,
            "bias_corrected_naive": implied,
            "relative_error": rel,
            "passed": rel <= IDENTITY_TOL,
        }
        if args.contrasts_out:
            try:
                write_contrasts(resolve_output_path(args.contrasts_out), series)
            except OSError as e:
                return _runtime_error(f"cannot write contrasts: {e}")

    report["diagnostic"] = thin_information_diagnostic(panel).to_dict()

    print(json.dumps(report, indent=2))
    if args.output:
        try:
            write_json(resolve_output_path(args.output), report)
        except OSError as e:
            return _runtime_error(f"cannot write report: {e}")
    return EXIT_OK


#  EXPERIMENT
def _load_experiment_file(path):
    try:
        raw = read_json(path)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    # null means "not set": defaults and flags apply
    return {k: v for k, v in raw.items() if v is not None}


def experiment_settings(args):
    """Config file values overridden by any flag given on the command line."""
    settings = _load_experiment_file(args.config) if args.config else {}
    flags = {
        "kind": args.kind,
        "sigma2": args.sigma2,
        "m": args.m,
        "n_grid": _int_list(args.n_grid, "--n-grid") if args.n_grid is not None else None,
        "replications": args.replications,
        "master_seed": args.seed,
        "scheme": args.scheme,
        "workers": args.workers,
        "n_max": args.n_max,
        "checkpoints": _int_list(args.checkpoints, "--checkpoints") if args.checkpoints is not None else None,
        "output": args.output,
        "format": args.format,
    }
    settings.update({k: v for k, v in flags.items() if v is not None})
    settings.setdefault("kind", "bias")
    settings.setdefault("workers", 1)
    settings.setdefault("format", "csv")
    if settings["kind"] not in ("bias", "sweep", "path", "incidental"):
        raise ConfigError(f"kind must be one of bias, sweep, path, incidental; got {settings['kind']!r}")
    if settings["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {settings['format']!r}")
    try:
        workers = int(settings["workers"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"workers must be an integer, got {settings['workers']!r}") from e
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {settings['workers']}")
    if "n_grid" in settings and not settings["n_grid"]:
        raise ConfigError("n_grid must not be empty")
    return settings


def _run_path(settings):
    path = run_sample_path(
        float(settings.get("sigma2", DEFAULT_SIGMA2)),
        int(settings.get("m", DEFAULT_M)),
        int(settings.get("n_max", DEFAULT_N_MAX)),
        int(settings.get("master_seed", DEFAULT_MASTER_SEED)),
        settings.get("checkpoints"),
        as_scheme(settings.get("scheme")),
    )
    verdicts = path_verdicts(path)
    return path, verdicts, path_report(path, verdicts)


def cmd_experiment(args, parser):
    try:
        settings = experiment_settings(args)
        kind = settings["kind"]
        config = None if kind == "path" else ExperimentConfig.from_dict(settings)
    except (TypeError, ValueError) as e:
        return _usage_error(parser, e)

    fmt = settings["format"]
    output = resolve_output_path(settings.get("output") or f"{kind}_results.{fmt}")
    workers = int(settings["workers"])
    logger.info("running %s experiment, workers=%d, output=%s", kind, workers, output)

    try:
        if kind == "path":
            sample_path, verdicts, report = _run_path(settings)
        else:
            if kind == "bias":
                summaries = run_bias_experiment(config, workers)
                verdicts = bias_verdicts(config, summaries)
            elif kind == "sweep":
                summaries = run_consistency_sweep(config, workers)
                verdicts = sweep_verdicts(config, summaries)
            else:
                summaries = run_incidental_mean_experiment(config, workers)
                verdicts = incidental_verdicts(config, summaries)
            report = experiment_report(kind, config, summaries, verdicts)
    except (TypeError, ValueError) as e:
        return _usage_error(parser, e)

    try:
        if fmt == "json":
            write_report(output, report)
            print(f"Report written to {output}")
        else:
            if kind == "path":
                write_sample_path(output, sample_path)
            else:
                write_summaries(output, summaries)
            write_report(sidecar_path(output), report)
            print(f"Results written to {output} (report: {sidecar_path(output)})")
    except OSError as e:
        return _runtime_error(f"cannot write results: {e}")

    for v in verdicts:
        print(v.line())
    if args.strict and not all(v.passed for v in verdicts):
        return EXIT_RUNTIME
    return EXIT_OK


#  ARGUMENT PARSER
def build_parser():
    parser = argparse.ArgumentParser(
        prog="neyman-scott",
        description="Neyman-Scott panel model: simulation, estimation and Monte Carlo checks.",
        epilog=SCHEME_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default from NS_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser(
        "generate", help="simulate a panel", epilog=SCHEME_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    g.add_argument("--m", type=int, default=DEFAULT_M, help="replicates per group (>= 2)")
    g.add_argument("--n", type=int, required=True, help="number of groups (>= 1)")
    g.add_argument("--sigma2", type=float, default=DEFAULT_SIGMA2, help="common error variance (> 0)")
    g.add_argument("--scheme", default=DEFAULT_SCHEME, help="group-mean scheme, see below")
    g.add_argument("--seed", type=int, default=DEFAULT_MASTER_SEED, help="64-bit seed")
    g.add_argument("-o", "--output", required=True, help="panel CSV path (sidecar: same stem, .json)")
    g.set_defaults(handler=cmd_generate, subparser=g)

    e = sub.add_parser("estimate", help="estimate sigma2 from a panel file")
    e.add_argument("panel", help="panel CSV (group,replicate,value)")
    e.add_argument("--method", choices=("closed", "newton", "recast"), default="closed")
    e.add_argument("-o", "--output", help="also write the JSON report here")
    e.add_argument("--contrasts-out", help="recast only: write the contrast series CSV")
    e.add_argument("--grad-tol", type=float, default=GRAD_TOL)
    e.add_argument("--max-iter", type=int, default=MAX_ITER)
    e.add_argument("--step-shrink", type=float, default=STEP_SHRINK)
    e.add_argument("--min-sigma2", type=float, default=MIN_SIGMA2)
    e.set_defaults(handler=cmd_estimate, subparser=e)

    x = sub.add_parser(
        "experiment", help="run a Monte Carlo experiment", epilog=SCHEME_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    x.add_argument("--kind", choices=("bias", "sweep", "path", "incidental"))
    x.add_argument("--config", help=f"JSON config file (\"version\": {CONFIG_VERSION}); flags override it")
    x.add_argument("--sigma2", type=float)
    x.add_argument("--m", type=int)
    x.add_argument("--n-grid", help="comma separated group counts, ascending")
    x.add_argument("--replications", "-R", type=int)
    x.add_argument("--seed", type=int, help="master seed")
    x.add_argument("--scheme")
    x.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    x.add_argument("--n-max", type=int, help="path: groups in the single long panel")
    x.add_argument("--checkpoints", help="path: comma separated prefix lengths")
    x.add_argument("-o", "--output")
    x.add_argument("--format", choices=("csv", "json"))
    x.add_argument("--strict", action="store_true", help="exit 1 when any verdict fails")
    x.set_defaults(handler=cmd_experiment, subparser=x)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.getLevelName(str(args.log_level).upper())
    if not isinstance(level, int):
        parser.error(f"unknown log level '{args.log_level}'")
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.handler(args, args.subparser)


# PROGRAM ENTRY POINT
if __name__ == "__main__":
    sys.exit(main())
