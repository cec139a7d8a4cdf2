"""Run every acceptance criterion and print the summary table.

    python3 scripts/reproduce_all.py --out runs/reproduce [--seed 0] [--quick]

Thin wrapper over ``physaware reproduce-all``; exits non-zero iff a
criterion fails.
"""

import argparse
import sys

from physaware.cli import main
from physaware.io import read_csv


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/reproduce")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    cmd = ["reproduce-all", "--seed", str(args.seed), "--out", args.out]
    code = main(cmd + (["--quick"] if args.quick else []))
    if code in (0, 1):
        header, rows = read_csv(f"{args.out}/summary.csv")
        print("  ".join(f"{h:>10}" for h in header))
        for r in rows:
            print("  ".join(f"{c[:10]:>10}" for c in r))
    return code


if __name__ == "__main__":
    sys.exit(run())
