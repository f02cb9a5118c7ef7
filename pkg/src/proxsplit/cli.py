"""``proxsplit`` command line.

Subcommands ``groundtruth``, ``bench``, ``denoise``, ``lasso``, ``pet`` and
``pwls`` share ``--config``, ``--out``, ``--threads`` and ``--seed``.
Exit status: 0 on success, 2 on a configuration error, 3 when the stored
reference fails its digest check, 1 for anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .config import load
from .exceptions import ConfigError, DigestMismatchError, InvalidArgumentError

COMMANDS = ("groundtruth", "bench", "denoise", "lasso", "pet", "pwls")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="proxsplit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=_positive, default=1, help="worker threads")
        p.add_argument("--seed", type=_u64, default=None, help="overrides problem.seed")
    return parser


def run(args):
    cfg = load(args.config)
    if args.seed is not None:
        cfg["problem"]["seed"] = args.seed
    if args.command == "groundtruth":
        _, digest = bench.cmd_groundtruth(cfg, args.out)
        print(f"reference written to {args.out}; sha256 {digest}")
    elif args.command == "bench":
        summary = bench.cmd_bench(cfg, args.out, threads=args.threads)
        print(bench.format_table(summary), end="")
    else:
        _, rec = bench.cmd_single(args.command, cfg, args.out)
        print(f"{rec.solver}: {len(rec) - 1} iterations, {rec.message}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DigestMismatchError as exc:
        print(f"digest mismatch: {exc}", file=sys.stderr)
        return 3
    except (InvalidArgumentError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
