"""Command-line front end.

Usage::

    csl gen        --config exp.json
    csl train-weak --config exp.json
    csl run        --config exp.json [--mode both|vanilla|csl] [--jobs N]
    csl sweep      --config exp.json --kind gap|count [--jobs N]

Any other ``--dotted.key value`` pair overrides the config, e.g.
``--csl.label_mode soft --seeds [0]``. Exit codes: 0 success, 1 usage or
config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback

from .experiment import ConfigError, Experiment, parse_override, step_gen, step_run, step_sweep, step_train_weak

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csl", description="Co-supervised weak-to-strong experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("gen", "generate the synthetic datasets"),
                        ("train-weak", "train and save the supervisor hierarchy"),
                        ("run", "vanilla and co-supervised runs per seed"),
                        ("sweep", "capability-gap or supervisor-count sweep")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment JSON file")
        if name in ("run", "sweep"):
            p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        if name == "run":
            p.add_argument("--mode", choices=["both", "vanilla", "csl"], default="both")
        if name == "sweep":
            p.add_argument("--kind", required=True, help="gap or count")
    return parser


def parse_overrides(extra: list[str]) -> dict:
    overrides = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or len(tok) < 3:
            raise UsageError(f"unexpected argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            try:
                value = next(it)
            except StopIteration:
                raise UsageError(f"override {tok} needs a value") from None
        overrides[key.replace("-", "_") if "." not in key else key] = parse_override(value)
    return overrides


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        overrides = parse_overrides(extra)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        exp = Experiment.from_file(args.config, overrides)
        if args.command == "sweep" and args.kind not in ("gap", "count"):
            raise UsageError(f"unknown sweep kind {args.kind!r}; choose gap or count")
    except (UsageError, ConfigError) as exc:
        print(f"csl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "gen":
            outputs = step_gen(exp)
        elif args.command == "train-weak":
            outputs = [step_train_weak(exp)]
        elif args.command == "run":
            outputs = step_run(exp, args.mode, args.jobs)
        else:
            outputs = [step_sweep(exp, args.kind, args.jobs)]
    except ConfigError as exc:
        print(f"csl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"csl: {args.command} failed: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        exp.output_dir.mkdir(parents=True, exist_ok=True)
        (exp.output_dir / f"FAILED.{args.command}").write_text(f"{type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
    marker = exp.output_dir / f"FAILED.{args.command}"
    if marker.exists():
        marker.unlink()
    for path in outputs:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
