"""Analytic and wall-clock scaling of the cross-axis contraction against softmax attention.

    python3 scripts/scaling.py [--sizes 8,16,32,64] [--d 64] [--heads 1]
"""

import argparse
import csv
import os

from crossaxis.flops import scaling_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="8,16,32,64")
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--heads", type=int, default=1)
    ap.add_argument("--out", default="results/scaling.csv")
    args = ap.parse_args()

    res = scaling_table([int(s) for s in args.sizes.split(",")], args.d, timed=True, heads=args.heads)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(res["rows"][0]))
        w.writeheader()
        w.writerows(res["rows"])
    for row in res["rows"]:
        print(row)
    for k, v in res["exponents"].items():
        print(f"exponent {k}: {v:.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
