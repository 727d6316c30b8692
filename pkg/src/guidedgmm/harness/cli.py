"""Command-line entry point.

Exit codes: 0 success, 1 a verified property failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import commands, verify
from .config import ConfigError, resolve

COMMANDS = {
    "simulate": commands.cmd_simulate,
    "confidence-sweep": commands.cmd_confidence_sweep,
    "entropy-sweep": commands.cmd_entropy_sweep,
    "density-grid": commands.cmd_density_grid,
    "phase-scan": commands.cmd_phase_scan,
}


def _global_flags(default):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=default, help="YAML experiment manifest")
    p.add_argument("--seed", type=int, default=default, help="override the manifest seed")
    p.add_argument("--out", metavar="DIR", default=default, help="output directory")
    p.add_argument("--preset", metavar="NAME", default=default, help="named experiment preset, e.g. fig2a")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedgmm", parents=[_global_flags(None)],
                                     description="Guided diffusion sampling on Gaussian mixtures.")
    sub = parser.add_subparsers(dest="command", required=True)
    # SUPPRESS keeps a flag given before the subcommand from being reset to None
    after = _global_flags(argparse.SUPPRESS)
    for name in [*COMMANDS, "verify"]:
        sub.add_parser(name, parents=[after])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    out = args.out
    if args.command == "verify":
        results = verify.run_suite()
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:36s} [{r.citation}]  {r.detail}")
        if out:
            verify.write_report(results, Path(out) / "verify.json")
        return 0 if all(r.passed for r in results) else 1
    try:
        cfg = resolve(args.preset, args.config, {"seed": args.seed, "out": out})
        files = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
