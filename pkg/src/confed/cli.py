"""Command-line entry point.

Subcommands::

    confed run <config> [--set k=v ...] [--name NAME] [--out DIR]
    confed sweep <config> --axis {rho,sr,topology} --values a,b,c
                 --seeds 0,1,2 [--set k=v ...] [--out DIR]
    confed report <trace.csv> [...] [--no-figures] [--out DIR]
    confed theory <config> [--set k=v ...] [--out DIR]

Output directory precedence: ``--out`` flag, then the ``CONFED_OUT_DIR``
environment variable, then ``./confed-out``.

Exit codes: 0 success; 2 configuration or input-file error;
3 divergence or invariant failure during a run; 4 the run finished
without reaching its target gap (run subcommand only).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from .engine import EngineError
from .harness import ConfigError, TraceFormatError, load_config, run, sweep
from .report import report, theory_report
from .theory import TheoryError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_NOT_REACHED = 4

OUT_DIR_ENV = "CONFED_OUT_DIR"
DEFAULT_OUT_DIR = "confed-out"


def _resolve_out(flag: str | None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(DEFAULT_OUT_DIR)


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {text!r}: {exc}") from exc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confed",
        description="Simulator for confederated learning over edge-server networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config", help="path to a key=value config file")
    p_run.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
    p_run.add_argument("--name", default=None, help="basename for output files")
    p_run.add_argument("--out", default=None, help="output directory")

    p_sweep = sub.add_parser("sweep", help="run a grid over one axis and seeds")
    p_sweep.add_argument("config", help="path to the base config file")
    p_sweep.add_argument("--axis", required=True, choices=("rho", "sr", "topology"))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated seeds")
    p_sweep.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE", help="override a config key")
    p_sweep.add_argument("--out", default=None, help="output directory")

    p_report = sub.add_parser("report", help="analyze trace CSVs")
    p_report.add_argument("traces", nargs="+", help="trace CSV files")
    p_report.add_argument("--no-figures", action="store_true",
                          help="skip figure rendering")
    p_report.add_argument("--out", default=None, help="output directory")

    p_theory = sub.add_parser(
        "theory", help="contraction constants and certified stepsize for a config"
    )
    p_theory.add_argument("config", help="path to a key=value config file")
    p_theory.add_argument("--set", dest="overrides", action="append", default=[],
                          metavar="KEY=VALUE", help="override a config key")
    p_theory.add_argument("--out", default=None, help="output directory")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _resolve_out(args.out)
    result = run(cfg, out_dir=out, name=args.name)
    print(
        f"run finished: {result.rounds_run} rounds, final opg "
        f"{result.final_opg:.6e} (target {cfg.stop_gap:.0e}), "
        f"{int(result.trace.vrsg_uploads[-1])} uploads"
    )
    print(f"trace: {result.trace_path}")
    if not result.reached:
        print("target gap not reached within max_rounds", file=sys.stderr)
        return EXIT_NOT_REACHED
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    out = _resolve_out(args.out)
    values = [v.strip() for v in args.values.split(",") if v.strip() != ""]
    summary = sweep(cfg, args.axis, values, _parse_seeds(args.seeds), out_dir=out)
    for cell in summary.cells:
        status = "FAILED" if cell.failed else "ok"
        rounds = (
            "-" if math.isnan(cell.mean_rounds_to_target)
            else f"{cell.mean_rounds_to_target:.1f}"
        )
        uploads = (
            "-" if math.isnan(cell.mean_uploads_to_target)
            else f"{cell.mean_uploads_to_target:.1f}"
        )
        print(
            f"{summary.axis}={cell.value}: rounds-to-target {rounds}, "
            f"uploads-to-target {uploads}, ok {cell.n_ok}/{cell.n_seeds} [{status}]"
        )
    print(f"summary: {out / f'sweep-{summary.axis}.csv'}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    out = _resolve_out(args.out)
    bundle = report(args.traces, out_dir=out, figures=not args.no_figures)
    print(bundle.text, end="")
    print(f"report: {bundle.json_path}")
    return EXIT_OK


def _cmd_theory(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    data = theory_report(cfg)
    print("theory report")
    print(f"  mu = {data['mu']:.9g}, L = {data['lip']:.9g}, sigma = {data['sigma']:.9g}")
    print(f"  certified alpha = {data['alpha_certified']:.9g}")
    print(
        f"  at alpha = {data['alpha']:.9g}: rho(T) = {data['spectral_radius']:.12g}, "
        f"gamma = {data['gamma']:.12g}, contracts = {data['contracts']}"
    )
    for key, value in data["constants"].items():
        print(f"  {key} = {value:.9g}")
    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theory.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(f"written: {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "report": _cmd_report,
        "theory": _cmd_theory,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, TraceFormatError, TheoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EngineError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
