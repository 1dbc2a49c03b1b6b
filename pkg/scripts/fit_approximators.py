"""Regenerate the shipped f_N / f_b weights from scratch.

Tabulates log N(z) by quadrature, fits both approximators and writes the
weight files plus fit reports into --out (default: a scratch directory, so
the packaged weights are only replaced when pointed at src/bpp/weights).
"""

import argparse
import time

from bpp import cli


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="fitted")
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    table = f"{args.out}/norm_table.csv"
    t0 = time.perf_counter()
    steps = [
        ["gen-norm-dataset", "--count", str(args.count), "--seed", str(args.seed), "--out", table],
        ["fit", "--dataset", table, "--target", "fN", "--out-weights", f"{args.out}/f_N.json"],
        ["fit", "--dataset", table, "--target", "fb", "--out-weights", f"{args.out}/f_b.json"],
    ]
    for argv in steps:
        code = cli.main(argv)
        print(f"{' '.join(argv[:1])}: exit {code} at {time.perf_counter() - t0:.0f} s")
        if code:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
