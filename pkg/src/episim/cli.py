"""Command-line entry points.

Subcommands:
  validate   check a scenario document, report every violation
  meanfield  integrate the deterministic system for a scenario
  simulate   run the stochastic engine for one or many seeds
  aggregate  combine per-seed trend files into mean/std bundles

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

from episim.compartments import ConfigurationError
from episim.config import ScenarioConfig, parse_scenario
from episim.engine import run as run_agent
from episim.meanfield import (
    Fidelity,
    IntegrationError,
    MeanFieldState,
    integrate,
)
from episim.trends import TrendSeries, aggregate_runs, emit_trends, parse_trends


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="episim",
                     description="Compartmental epidemic simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    val = sub.add_parser("validate", help="validate a scenario document")
    val.add_argument("config")

    mf = sub.add_parser("meanfield", help="deterministic mean-field run")
    mf.add_argument("config")
    mf.add_argument("--fidelity", choices=["as-written", "diagram"])
    mf.add_argument("--method", choices=["euler", "rk4"])
    mf.add_argument("--dt", type=float)
    mf.add_argument("--out", default="-")
    mf.add_argument("--format", choices=["csv", "json"], default="csv")

    sim = sub.add_parser("simulate", help="stochastic agent-based run")
    sim.add_argument("config")
    sim.add_argument("--seeds", type=int, default=1,
                     help="number of consecutive seeds to run")
    sim.add_argument("--seed", type=int, default=None,
                     help="base seed (defaults to run.seed in the config)")
    sim.add_argument("--threads", type=int, default=1,
                     help="worker threads for the contact phase; results "
                          "do not depend on this")
    sim.add_argument("--trace", default=None,
                     help="write a line-delimited event trace here")
    sim.add_argument("--out", default="-")
    sim.add_argument("--format", choices=["csv", "json"], default="csv")

    agg = sub.add_parser("aggregate", help="aggregate per-seed trend files")
    agg.add_argument("files", nargs="+")
    agg.add_argument("--out", default="-")
    agg.add_argument("--format", choices=["csv", "json"], default="csv")
    return parser


def _write(obj, out: str, fmt: str) -> None:
    if out == "-":
        emit_trends(obj, sys.stdout, fmt)
    else:
        emit_trends(obj, out, fmt)


def _cmd_validate(args) -> int:
    parse_scenario(args.config)
    print("configuration is valid")
    return 0


def _cmd_meanfield(args) -> int:
    cfg = parse_scenario(args.config)
    if cfg.variant is None:
        raise ConfigurationError(
            "enabled modules have no mean-field counterpart; set "
            "model.variant explicitly or adjust the toggles")
    fidelity = cfg.fidelity
    if args.fidelity:
        fidelity = (Fidelity.AS_WRITTEN if args.fidelity == "as-written"
                    else Fidelity.DIAGRAM)
    method = args.method or cfg.method
    dt = args.dt if args.dt is not None else cfg.dt
    steps = int(round(cfg.scenario.iterations / dt))
    state0 = MeanFieldState.of(
        cfg.variant, n=1.0, I=cfg.scenario.initial_infected_fraction)
    traj = integrate(state0, cfg.scenario.params, cfg.variant, dt=dt,
                     steps=steps, method=method, fidelity=fidelity)
    series = TrendSeries(
        compartments=tuple(c.value for c in traj.compartments),
        rows=traj.states,
        scenario_hash=cfg.scenario.scenario_hash,
        seed=None, mode="meanfield", fidelity=fidelity.value)
    _write(series, args.out, args.format)
    return 0


def _cmd_simulate(args) -> int:
    cfg = parse_scenario(args.config)
    if cfg.scenario.contact is None:
        raise ConfigurationError(
            "simulate needs a contact_source section in the configuration")
    base_seed = cfg.seed if args.seed is None else args.seed
    if args.seeds < 1:
        raise ConfigurationError("--seeds must be >= 1")

    trace_fh = None
    trace_cb = None
    if args.trace:
        trace_fh = open(args.trace, "w")

        def trace_cb(event, fh=trace_fh):
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")

    try:
        results = []
        for k in range(args.seeds):
            results.append(run_agent(cfg.scenario, base_seed + k,
                                     threads=args.threads, trace=trace_cb))
    finally:
        if trace_fh is not None:
            trace_fh.close()

    if args.seeds == 1:
        _write(results[0].trends, args.out, args.format)
    else:
        _write(aggregate_runs([r.trends for r in results]), args.out,
               args.format)
    return 0


def _cmd_aggregate(args) -> int:
    series = []
    for path in args.files:
        parsed = parse_trends(path)
        if not isinstance(parsed, TrendSeries):
            raise ConfigurationError(f"{path}: not a per-seed trend series")
        series.append(parsed)
    _write(aggregate_runs(series), args.out, args.format)
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "meanfield": _cmd_meanfield,
    "simulate": _cmd_simulate,
    "aggregate": _cmd_aggregate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IntegrationError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
