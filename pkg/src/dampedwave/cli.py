"""Command-line experiment runner.

Subcommands: simulate, well, weights, fit, sweep.  Exit codes: 0 success,
2 config parse error, 3 validation failure, 4 blow-up, 5 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import traceback
from pathlib import Path

from dampedwave import runner
from dampedwave.config import ConfigError, parse_config
from dampedwave.runner import (
    EXIT_BLOWUP,
    EXIT_CONFIG,
    EXIT_INTERNAL,
    EXIT_VALIDATION,
    ValidationFailure,
)
from dampedwave.solver import BlowUpError
from dampedwave.textio import format_float


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dampedwave",
        description="Damped wave equation laboratory: simulate, analyze, fit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run a trajectory and record energies"),
        ("well", "potential-well threshold analysis only"),
        ("weights", "tabulate the psi/phi/chi weight functions"),
        ("fit", "fit a decay envelope to an existing energy CSV"),
        ("sweep", "run a parameter sweep and collect a rate manifest"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="experiment config (TOML)")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument(
            "--workers", type=int, default=1, help="parallel sweep cells (sweep only)"
        )
        cmd.add_argument(
            "--seed", type=int, default=None, help="override the config seed"
        )
    return parser


def _print_well(report: runner.RunReport) -> None:
    well = report.well
    for key in ("s1", "F1", "s2", "M_script", "C0", "M"):
        if key in well:
            print(f"{key} = {format_float(well[key])}")
    suffix = " (marginal)" if well.get("marginal") else ""
    print(f"verdict = {well['verdict']}{suffix}")
    for violation in well.get("violations", []):
        print(f"  violated: {violation}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out_dir = Path(args.out) if args.out else Path("runs") / args.command
    config_dir = Path(args.config).resolve().parent

    try:
        if args.command == "simulate":
            code, report = runner.run_simulate(config, out_dir)
            runner.echo_config(config, out_dir)
            energy = report.energy
            print(
                f"simulate: status={report.status} E0={format_float(energy['E0'])} "
                f"E_end={format_float(energy['E_end'])} "
                f"max_residual={energy['max_identity_residual']:.3e}"
            )
            _print_well(report)
            return code
        if args.command == "well":
            code, report = runner.run_well(config, out_dir)
            runner.echo_config(config, out_dir)
            _print_well(report)
            return code
        if args.command == "weights":
            code, report = runner.run_weights(config, out_dir)
            runner.echo_config(config, out_dir)
            consts = report.derived_constants
            print(
                f"weights: profile={consts['profile']} t_max={consts['t_max']:g} "
                f"tail_integral={format_float(consts['tail_integral'])}"
            )
            return code
        if args.command == "fit":
            code, report = runner.run_fit(config, out_dir, config_dir)
            runner.echo_config(config, out_dir)
            fit = report.fits[0]
            print(
                f"fit[{fit['kind']}]: rate={format_float(fit['fitted_rate'])} "
                f"C={format_float(fit['fitted_C'])} r2={fit['r_squared']:.6f} "
                f"dominance={fit['dominance_ratio']:.9f}"
            )
            return code
        if args.command == "sweep":
            code, rows = runner.run_sweep(config, out_dir, workers=args.workers)
            runner.echo_config(config, out_dir)
            for row in rows:
                print(
                    f"cell {row['run_dir']}: m={row['m']:g} status={row['status']} "
                    f"fitted={row['fitted_exponent']:.4g} "
                    f"theory_b413={row['theory_b413']:.4g} "
                    f"theory_190={row['theory_190']:.4g}"
                )
            print(f"manifest: {out_dir / 'manifest.csv'}")
            return code
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        if exc.report is not None:
            for line in exc.report.lines():
                print(line, file=sys.stderr)
        return EXIT_VALIDATION
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except Exception:  # noqa: BLE001 -- report and map to the internal exit code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
