"""Command-line interface.

Subcommands: ``simulate`` (run a configured scenario grid and emit tables
plus figures), ``analyze`` (fit one method to a CSV dataset), ``value``
(counterfactual value study), and ``truth`` (Monte Carlo projection oracle
for a scenario's true blip coefficients).  Exit codes: 0 success, 1
validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import learners_from_config, load_experiment_config, normalize_inference
from .dataio import design_from_schema, ingest_csv, load_schema
from .exceptions import ConfigError, DataFormatError, RqlearnError
from .harness import run_experiment, run_value_study
from .report import (
    analyze,
    emit_table,
    write_analysis_csv,
    write_analysis_markdown,
    write_value_csv,
)
from .simgen import Scenario, project_true_beta1, project_true_beta2


def _parse_scenario_token(token: str, n: int = 10) -> Scenario:
    parts = token.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError("scenario must look like propensity:outcome[:varpi]")
    varpi = int(parts[2]) if len(parts) == 3 else 0
    return Scenario(propensity=parts[0], outcome=parts[1], n=n, varpi=varpi)


def _default_learners():
    import configparser

    return learners_from_config(configparser.ConfigParser())


def _cmd_simulate(args) -> int:
    config = load_experiment_config(args.config)
    rows = run_experiment(config, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    written = []
    if "csv" in formats:
        written.append(emit_table(rows, "csv", os.path.join(args.out, "results.csv")))
    if "markdown" in formats:
        written.append(
            emit_table(rows, "markdown", os.path.join(args.out, "results.md"), config.ci_level)
        )
    from .plots import save_bias_sd_figure, save_coverage_figure

    written.append(save_bias_sd_figure(rows, os.path.join(args.out, "bias_sd.png")))
    if any(r.coverage is not None for r in rows):
        written.append(save_coverage_figure(rows, os.path.join(args.out, "coverage.png"),
                                            config.ci_level))
    for path in written:
        print(path)
    return 0


def _cmd_analyze(args) -> int:
    schema = load_schema(args.schema)
    data = ingest_csv(args.data, schema)
    design = design_from_schema(schema)
    inference = normalize_inference(args.inference)
    learners = None
    if args.method == "proposed":
        if args.config:
            import configparser

            cp = configparser.ConfigParser()
            if not cp.read(args.config):
                raise ConfigError(f"cannot read config file {args.config!r}")
            learners = learners_from_config(cp)
        else:
            learners = _default_learners()
    rows = analyze(
        data, design, args.method, inference,
        learners=learners, k_folds=args.k_folds, clip_eps=args.clip_eps,
        seed=args.seed, ci_level=args.ci_level, n_boot=args.n_boot, kappa=args.kappa,
    )
    os.makedirs(args.out, exist_ok=True)
    written = [
        write_analysis_csv(rows, os.path.join(args.out, "analysis.csv")),
        write_analysis_markdown(rows, os.path.join(args.out, "analysis.md"), args.ci_level),
    ]
    from .plots import save_coefficient_figure

    written.append(save_coefficient_figure(rows, os.path.join(args.out, "coefficients.png")))
    for path in written:
        print(path)
    return 0


def _cmd_value(args) -> int:
    config = load_experiment_config(args.config)
    rows = run_value_study(config, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    written = [write_value_csv(rows, os.path.join(args.out, "value.csv"))]
    from .plots import save_value_figure

    if rows:
        written.append(save_value_figure(rows, os.path.join(args.out, "value.png")))
    for path in written:
        print(path)
    return 0


def _cmd_truth(args) -> int:
    scen = _parse_scenario_token(args.scenario)
    beta2 = project_true_beta2(scen, n_mc=args.mc, seed=args.seed)
    beta1 = project_true_beta1(scen, n_mc=args.mc, seed=args.seed)
    print("beta2_star: " + " ".join(format(v, ".6f") for v in beta2))
    print("beta1_star: " + " ".join(format(v, ".6f") for v in beta1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rqlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a configured simulation grid")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", default=".")
    sim.add_argument("--workers", type=int, default=None)
    sim.add_argument("--format", default="csv,markdown")
    sim.set_defaults(func=_cmd_simulate)

    ana = sub.add_parser("analyze", help="fit one method to a CSV dataset")
    ana.add_argument("--data", required=True)
    ana.add_argument("--schema", required=True)
    ana.add_argument("--method", required=True, choices=["proposed", "standard_q", "dwols"])
    ana.add_argument("--inference", required=True)
    ana.add_argument("--kappa", type=float, default=0.05)
    ana.add_argument("--out", default=".")
    ana.add_argument("--config", default=None, help="optional INI supplying [learners]")
    ana.add_argument("--k-folds", dest="k_folds", type=int, default=2)
    ana.add_argument("--clip-eps", dest="clip_eps", type=float, default=0.01)
    ana.add_argument("--seed", type=int, default=0)
    ana.add_argument("--ci-level", dest="ci_level", type=float, default=0.95)
    ana.add_argument("--n-boot", dest="n_boot", type=int, default=200)
    ana.set_defaults(func=_cmd_analyze)

    val = sub.add_parser("value", help="value functions of estimated regimes")
    val.add_argument("--config", required=True)
    val.add_argument("--out", default=".")
    val.add_argument("--workers", type=int, default=None)
    val.set_defaults(func=_cmd_value)

    tru = sub.add_parser("truth", help="Monte Carlo projection of true blip coefficients")
    tru.add_argument("--scenario", required=True, help="propensity:outcome[:varpi]")
    tru.add_argument("--mc", type=int, default=1_000_000)
    tru.add_argument("--seed", type=int, default=0)
    tru.set_defaults(func=_cmd_truth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RqlearnError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
