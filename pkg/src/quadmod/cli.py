"""Command-line entry point: ``quadmod run | export-constellation | list-presets``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import CATALOGUE, PRESETS, build_constellation, load_config, preset, with_overrides
from .constellations import write_constellation
from .errors import ConfigError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNDERRESOLVED = 3

log = logging.getLogger("quadmod")


def _cmd_run(args) -> int:
    target = args.target
    try:
        if target in PRESETS:
            cfg = preset(target)
        elif Path(target).is_file():
            cfg = load_config(target)
        else:
            raise ConfigError(f"{target!r} is neither a preset nor a config file")
        cfg = with_overrides(cfg, seed=args.seed, output_dir=args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    from .experiments import run_experiment

    result = run_experiment(cfg, jobs=args.jobs, figures=not args.no_figures)
    for f in result.files:
        print(f)
    if result.gains is not None:
        for g in result.gains.pairs:
            print(f"gain {g.constellation_a} vs {g.constellation_b}: {g.gain_db:+.2f} dB (Eb/N0), "
                  f"{g.gain_esn0_db:+.2f} dB (Es/N0)")
    for msg in result.failures:
        print(f"error: {msg}", file=sys.stderr)
    if result.underresolved:
        print("warning: some SER points did not reach min_errors (see summary.json)", file=sys.stderr)
        return EXIT_UNDERRESOLVED
    return EXIT_OK


def _cmd_export(args) -> int:
    if args.name not in CATALOGUE:
        print(f"error: unknown constellation {args.name!r}; known: {', '.join(CATALOGUE)}", file=sys.stderr)
        return EXIT_INVALID
    c = build_constellation(args.name)
    write_constellation(c, args.out)
    print(args.out)
    return EXIT_OK


def _cmd_list(args) -> int:
    for name, cfg in PRESETS.items():
        labels = ", ".join(cfg.labels) or "16-QAM timing loop"
        print(f"{name:<16} {cfg.experiment.value:<12} {labels}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadmod", description="4-D dual-polarization modulation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset or a TOML config file")
    run.add_argument("target", help="preset name or path to a config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    run.set_defaults(func=_cmd_run)

    exp = sub.add_parser("export-constellation", help="write a catalogue constellation to a text file")
    exp.add_argument("name")
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=_cmd_export)

    ls = sub.add_parser("list-presets", help="show built-in presets")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
