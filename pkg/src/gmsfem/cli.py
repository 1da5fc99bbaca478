"""Command line entry point.

    gmsfem run CONFIG [--out DIR] [--threads N]
    gmsfem fine CONFIG [--out DIR]
    gmsfem table CSV [CSV_WITH_OVERSAMPLING]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import ConfigError, GMsFEMError, RasterError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmsfem", description="Multiscale elasticity experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the basis sweep of an experiment file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the file)")
    run.add_argument("--threads", type=int, help="region worker threads (overrides the file)")
    fine = sub.add_parser("fine", help="compute the fine reference only")
    fine.add_argument("config")
    fine.add_argument("--out")
    tab = sub.add_parser("table", help="render result CSVs as a text table")
    tab.add_argument("csv", nargs="+")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "table":
            if len(args.csv) > 2:
                raise ConfigError("csv", "give one CSV, or two for a with/without oversampling comparison")
            rows = [harness.read_csv_rows(p) for p in args.csv]
            _, text = harness.emit_table(rows[0], rows[1] if len(rows) == 2 else None)
            sys.stdout.write(text)
            return EXIT_OK
        cfg = harness.load_config(args.config)
        cfg = harness.with_overrides(cfg, output_dir=args.out,
                                     threads=getattr(args, "threads", None))
        if args.command == "fine":
            path = harness.run_fine_only(cfg)
            print(path)
            return EXIT_OK
        result = harness.run_experiment(cfg)
        sys.stdout.write(harness.emit_table(result.rows)[1])
        print(f"wrote {result.files['csv']}")
        return EXIT_OK
    except (ConfigError, RasterError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GMsFEMError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
