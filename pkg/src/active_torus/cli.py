"""
Command-line entry point for active-torus.

    active-torus run <config>
    active-torus uniqueness <config>
    active-torus kernel-table --q 1 1.1 1.2 --tmax 0.05 [--tmin ...] [--points ...]
    active-torus inspect <checkpoint>

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numerical abort.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import load_config, load_settings
from .core.heatkernel import kernel_table
from .core.types import ActiveTorusError, ConfigError, KernelError, SolverAbort
from .io.checkpoint import describe_checkpoint
from .io.runner import run_scenario, run_uniqueness
from .io.sinks import write_kernel_csv
from .logging_setup import get_logger, setup_logging

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3

logger = get_logger("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="active-torus",
        description="Pseudo-spectral simulator and verification harness for active particles on the torus",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--env-file", help="Path to .env file")
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging level",
    )
    parser.add_argument("--log-format", choices=["text", "json"], help="Log format")
    sub = parser.add_subparsers(dest="command", required=True)

    run_cmd = sub.add_parser("run", help="Integrate one scenario")
    run_cmd.add_argument("config", help="Run configuration (.cfg, .json or .yaml)")
    run_cmd.add_argument("--output", help="Run directory (overrides the config)")

    pair_cmd = sub.add_parser("uniqueness", help="Evolve a perturbed pair and check the difference")
    pair_cmd.add_argument("config", help="Run configuration (.cfg, .json or .yaml)")
    pair_cmd.add_argument("--output", help="Run directory (overrides the config)")

    kernel_cmd = sub.add_parser("kernel-table", help="Space-time norms of grad Phi as CSV")
    kernel_cmd.add_argument("--q", type=float, nargs="+", required=True, help="Exponents in [1, 4/3)")
    kernel_cmd.add_argument("--tmax", type=float, required=True, help="Largest time")
    kernel_cmd.add_argument("--tmin", type=float, help="Smallest time (default tmax / 10)")
    kernel_cmd.add_argument("--points", type=int, default=8, help="Log-spaced times")
    kernel_cmd.add_argument("--output", help="CSV file (default stdout)")

    inspect_cmd = sub.add_parser("inspect", help="Describe a checkpoint file")
    inspect_cmd.add_argument("checkpoint", help="Checkpoint (.taf)")
    return parser


def _print_issues(console: Console, error: ConfigError) -> None:
    console.print("Configuration issues found:", style="bold red")
    for issue in error.issues:
        console.print(f"  - {issue}", markup=False)


def _summary_table(title: str, rows: Sequence[Sequence[str]]) -> Table:
    table = Table(title=title)
    table.add_column("quantity")
    table.add_column("value", justify="right")
    for name, value in rows:
        table.add_row(name, value)
    return table


def _cmd_run(args: argparse.Namespace, console: Console) -> int:
    settings = load_settings(args.env_file)
    config = load_config(args.config)
    result = run_scenario(config, settings, args.output)
    summary = result.trajectory.summary
    rows = [("directory", str(result.directory))]
    if summary is not None:
        rows += [
            ("steps", str(summary.steps)),
            ("dt", f"{summary.dt:.6g}"),
            ("t_final", f"{summary.t_final:.6g}"),
            ("mass drift", f"{summary.mass_drift:.3e}"),
            ("min f", f"{summary.min_f:.6g}"),
            ("min 1 - rho", f"{summary.min_one_minus_rho:.6g}"),
        ]
    console.print(_summary_table("run", rows))
    return EXIT_OK


def _cmd_uniqueness(args: argparse.Namespace, console: Console) -> int:
    settings = load_settings(args.env_file)
    config = load_config(args.config)
    result = run_uniqueness(config, settings, args.output)
    fit = result.summary["gronwall"]
    ratio = result.summary["ratio"]
    rows = [
        ("directory", str(result.directory)),
        ("t_check", f"{result.summary['t_check']:.6g}"),
        ("ratio", "undefined" if not ratio["defined"] else f"{ratio['ratio']:.6g}"),
        ("Gronwall C", "undefined" if not fit["defined"] else f"{fit['rate']:.6g}"),
        ("envelope holds", str(fit["envelope_holds"])),
        ("t*", str(result.summary["small_time_horizon"])),
    ]
    console.print(_summary_table("uniqueness", rows))
    return EXIT_OK


def _cmd_kernel_table(args: argparse.Namespace, console: Console) -> int:
    tmin = args.tmin if args.tmin is not None else args.tmax / 10.0
    if not 0 < tmin <= args.tmax or args.points < 1:
        raise KernelError("need 0 < tmin <= tmax and at least one point")
    times = list(np.geomspace(tmin, args.tmax, args.points)) if args.points > 1 else [args.tmax]
    rows = kernel_table(args.q, [float(t) for t in times])
    if args.output:
        write_kernel_csv(rows, Path(args.output))
        logger.info("kernel table written to %s", args.output)
    else:
        write_kernel_csv(rows, sys.stdout)
    return EXIT_OK


def _cmd_inspect(args: argparse.Namespace, console: Console) -> int:
    info = describe_checkpoint(args.checkpoint)
    rows = [
        ("path", info.path),
        ("dims", " x ".join(str(n) for n in info.dims)),
        ("t", repr(info.t)),
        ("step", str(info.step)),
        ("mass", f"{info.mass:.17g}"),
        ("min f", f"{info.min_f:.6g}"),
        ("max rho", f"{info.max_rho:.6g}"),
        ("payload sha256", info.payload_sha256),
    ]
    console.print(_summary_table("checkpoint", rows))
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "uniqueness": _cmd_uniqueness,
    "kernel-table": _cmd_kernel_table,
    "inspect": _cmd_inspect,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    err_console = Console(stderr=True)
    try:
        settings = load_settings(args.env_file)
    except ValueError as e:
        err_console.print(f"invalid environment settings: {e}", markup=False)
        return EXIT_CONFIG
    logging_config = settings.logging
    setup_logging(
        log_level=args.log_level or logging_config.log_level,
        log_format=args.log_format or logging_config.log_format,
        log_dir=logging_config.log_dir,
    )

    console = Console()
    try:
        return COMMANDS[args.command](args, console)
    except ConfigError as e:
        _print_issues(err_console, e)
        return EXIT_CONFIG
    except SolverAbort as e:
        err_console.print(str(e), markup=False, style="bold red")
        return EXIT_ABORT
    except ActiveTorusError as e:
        logger.error("%s failed: %s", args.command, e)
        err_console.print(str(e), markup=False)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
