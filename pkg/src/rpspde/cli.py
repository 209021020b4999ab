"""Command line entry point ``rps``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import help_text, load_config
from .errors import (HyperbolicityViolation, NonFiniteResult, NotConverged, ParseError,
                     SingularKernel, TruncationTooShort, ValidationError)
from .pipeline import STAGES, run_pipeline

EXIT_OK, EXIT_VALIDATION, EXIT_NOT_CONVERGED, EXIT_NUMERIC = 0, 2, 3, 4

_COMMANDS = {
    "eigs": ["eigs"],
    "simulate-y1": ["y1"],
    "solve-rps": ["solve"],
    "verify": ["solve", "verify"],
    "stationary": ["stationary"],
    "malliavin-check": ["malliavin"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rps",
        description="Random periodic solutions of semilinear SPDEs: solve, verify, report.",
        epilog=help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*_COMMANDS, "run"]:
        p = sub.add_parser(name, epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", required=True, help="flat key/value YAML file")
        p.add_argument("--out", help="output directory, or a .json report path")
        if name == "run":
            p.add_argument("--stages", default=",".join(STAGES),
                           help=f"comma-separated subset of {','.join(STAGES)}")
    return parser


def _targets(out):
    if out is None:
        return None, None
    p = Path(out)
    if p.suffix == ".json":
        return p.parent, p
    return p, None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        stages = args.stages if args.command == "run" else _COMMANDS[args.command]
        out_dir, report_path = _targets(args.out)
        report = run_pipeline(cfg, stages, out_dir, report_path)
    except (ParseError, ValidationError, HyperbolicityViolation, TruncationTooShort) as exc:
        _fail(exc)
        return EXIT_VALIDATION
    except NotConverged as exc:
        _fail(exc)
        return EXIT_NOT_CONVERGED
    except (NonFiniteResult, SingularKernel, FloatingPointError) as exc:
        _fail(exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        _fail(exc)
        return EXIT_VALIDATION
    if out_dir is None:
        print(report.to_json())
    return EXIT_OK


def _fail(exc):
    stage = getattr(exc, "stage", None)
    prefix = f"stage {stage}: " if stage else ""
    print(f"rps: error: {prefix}{type(exc).__name__}: {exc}", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
