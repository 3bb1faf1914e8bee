"""Command line entry point: ``glmcs <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration or argument error, 3 numerical
failure (the failing operation is printed on stderr).
"""

from __future__ import annotations

import argparse
import sys

from ..errors import GlmcsError, NumericalError
from .experiments import coverage_experiment, martingale_validate, regret_audit, width_experiment, write_csv
from .scenario import SET_TYPES, ScenarioConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

_COMMANDS = {
    "simulate": coverage_experiment,
    "width": width_experiment,
    "regret": regret_audit,
    "validate-martingale": martingale_validate,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glmcs", description="Confidence sequences for GLMs: simulations and audits.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in _COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON scenario file")
        s.add_argument("--out", help="CSV output path (default: stdout)")
        s.add_argument("--seed", type=int)
        s.add_argument("--reps", type=int)
        s.add_argument("--family")
        s.add_argument("--d", type=int)
        s.add_argument("--n", type=int)
        s.add_argument("--delta", type=float)
        s.add_argument("--set", choices=SET_TYPES, help="evaluate a single set type with default parameters")
        if name == "validate-martingale":
            s.add_argument("--eta", type=float, help="shift parameter in (0, 1]")
    return p


def load_config(args) -> ScenarioConfig:
    raw = ScenarioConfig.from_json(args.config).to_dict() if args.config else ScenarioConfig().to_dict()
    for key in ("seed", "reps", "family", "d", "n", "delta"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    if args.set is not None:
        raw["sets"] = [{"type": args.set}]
    return ScenarioConfig.from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "validate-martingale":
            rows = martingale_validate(cfg, eta=args.eta)
        else:
            rows = _COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"glmcs: numerical failure in {exc.operation or 'unknown operation'}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GlmcsError, ValueError) as exc:
        print(f"glmcs: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
