"""Command-line entry point.

Exit codes: 0 success, 1 numerical failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import experiments, io
from .config import load_config, parse_config
from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 1, 2

COMMANDS = {
    "stationary": (experiments.run_stationary, "stationary distribution of a stochastic matrix"),
    "simulate": (experiments.run_simulate, "simulate a switched diffusion"),
    "fit": (experiments.run_fit, "bootstrap ensemble fit by averaged gradient flow"),
    "rarepath": (experiments.run_rarepath, "most likely path to a terminal rare event"),
    "ldp": (experiments.run_ldp, "Monte Carlo check of the large-deviation exponent"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", type=Path, help="TOML run configuration", **({"default": None} | d))
    p.add_argument("--seed", type=int, help="master seed (overrides the config)", **({"default": None} | d))
    p.add_argument("--out", type=Path, help="output directory", **({"default": Path("out")} | d))
    p.add_argument("--quiet", action="store_true", help="only report errors", **({"default": False} | d))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rareflow", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        _common(sub.add_parser(name, help=help_text), suppress=True)
    rep = sub.add_parser("reproduce", help="rebuild one of the two regression experiments")
    rep.add_argument("part", choices=["a", "b"])
    _common(rep, suppress=True)
    return parser


def _run(args) -> tuple[int, str]:
    if args.config is not None:
        cfg, raw = load_config(args.config)
    elif args.command == "reproduce":
        cfg, raw = parse_config({}), {}
    else:
        raise ValidationError(f"{args.command}: --config is required")
    if args.seed is not None and args.seed < 0:
        raise ValidationError("--seed: must be non-negative")
    seed = args.seed if args.seed is not None else (cfg.seed if cfg.seed is not None else 0)
    out = Path(args.out)
    fresh = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    label = args.command if args.command != "reproduce" else f"reproduce {args.part}"
    record = {"command": label, "config": raw}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if args.quiet else "default")
            if args.command == "reproduce":
                summary = experiments.run_reproduce(args.part, cfg.reproduce, seed, out)
            else:
                summary = COMMANDS[args.command][0](cfg, seed, out)
    except NumericalError as exc:
        io.write_manifest(out, label, record, seed, status="partial", error=str(exc))
        raise
    except ValidationError:
        if fresh and not any(out.iterdir()):
            out.rmdir()
        raise
    io.write_manifest(out, label, record, seed)
    return EXIT_OK, _headline(args.command, summary, out)


def _headline(command: str, summary: dict, out: Path) -> str:
    if command == "stationary":
        return f"pi = {summary['pi']} (residual {summary['residual']:.2e}) -> {out}"
    if command == "reproduce":
        return f"curve distance {summary['curve_distance']:.4g} -> {out}"
    return f"wrote {out}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        code, msg = _run(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if not args.quiet:
        print(msg)
    return code


if __name__ == "__main__":
    sys.exit(main())
