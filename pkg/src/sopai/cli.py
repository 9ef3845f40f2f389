"""Command line entry point: ``python -m sopai <command>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import landscape as ls
from .errors import NumericalError, SizeLimitError
from .oracles import CHECKS
from .runner import MalformedCsvError, format_summary, landscape_cmd, load_config, oracle_cmd, run, summarize

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sopai", description="Source-guided pruning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="full seeded sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="run only this seed")
    r.add_argument("--out", help="output directory (overrides the config)")

    s = sub.add_parser("summarize", help="aggregate a results CSV")
    s.add_argument("--in", dest="path", required=True)

    lc = sub.add_parser("landscape", help="toy landscape plot data")
    lc.add_argument("--case", required=True, choices=sorted(ls.CASES))
    lc.add_argument("--approx", default="exact", choices=ls.APPROXIMATIONS)
    lc.add_argument("--out", required=True)

    o = sub.add_parser("oracle", help="run a self-check")
    o.add_argument("--check", required=True, choices=CHECKS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = replace(cfg, seeds=(args.seed,))
            res = run(cfg, out_dir=args.out)
            print(f"{len(res.records)} records, transfer leakage {res.leakage}, "
                  f"{len(res.incomplete)} incomplete cells -> {args.out or cfg.out_dir}")
            return EXIT_OK
        if args.command == "summarize":
            print(format_summary(summarize(args.path)))
            return EXIT_OK
        if args.command == "landscape":
            print(json.dumps(landscape_cmd(args.case, args.approx, args.out), indent=2, default=str))
            return EXIT_OK
        ok, results = oracle_cmd(args.check)
        for r in results:
            print(r.line())
        return EXIT_OK if ok else EXIT_NUMERICAL
    except MalformedCsvError as exc:
        for n, msg in exc.problems:
            print(f"{args.path}:{n}: {msg}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SizeLimitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
