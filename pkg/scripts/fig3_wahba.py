"""Reproduce the BPP vs GPP learning-curve comparison (3 seeds x 200k steps).

Usage: python scripts/fig3_wahba.py [--out results/fig3] [--steps 200000] [--seeds 0 1 2] [--no-reuse]
"""

import argparse
import json
import logging

from bpp.fig3 import run_fig3


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="results/fig3")
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--no-reuse", dest="reuse", action="store_false")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    summary = run_fig3(args.out, tuple(args.seeds), args.steps, reuse=args.reuse)
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
