#!/usr/bin/env python3
"""Reproduce every results table over the locally available datasets.

Thin wrapper over `poisonlab table`; writes table{2,3,4,6}.{json,txt}
into --out.  With all seven datasets and default budgets this is the
full experiment battery, so expect a long run; --runs / --jobs and
--datasets are passed through for cheaper partial reruns.
"""

import argparse
import sys

from poisonlab.cli import main as cli_main

TABLES = (2, 3, 4, 6)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="out")
    parser.add_argument("--data-dir", default="data")
    parser.add_argument("--datasets", help="comma-separated subset (default: all available)")
    parser.add_argument("--runs", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tables", default=",".join(str(t) for t in TABLES))
    args = parser.parse_args(argv)

    worst = 0
    for table in (int(t) for t in args.tables.split(",")):
        argv_table = [
            "table", "--table", str(table),
            "--out", args.out, "--data-dir", args.data_dir, "--seed", str(args.seed),
        ]
        if args.datasets:
            argv_table += ["--datasets", args.datasets]
        if args.runs is not None:
            argv_table += ["--runs", str(args.runs)]
        if args.jobs is not None:
            argv_table += ["--jobs", str(args.jobs)]
        print(f"== table {table} ==")
        worst = max(worst, cli_main(argv_table))
    return worst


if __name__ == "__main__":
    sys.exit(main())
