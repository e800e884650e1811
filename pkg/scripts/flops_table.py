"""FLOP / parameter table for the large preset, CAT vs softmax baseline, across FFN ratios.

    python3 scripts/flops_table.py [--out results/flops_table.csv]
"""

import argparse
import csv
import dataclasses
import os

from crossaxis.flops import flops_model, large_preset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/flops_table.csv")
    ap.add_argument("--ratios", default="1,2,4")
    args = ap.parse_args()

    rows = []
    for r in [float(x) for x in args.ratios.split(",")]:
        reps = {}
        for kind in ("cat", "vit_baseline"):
            cfg = dataclasses.replace(large_preset(kind), ffn_ratio=r)
            reps[kind] = flops_model(cfg, "macs")
        cat, vit = reps["cat"], reps["vit_baseline"]
        rows.append({
            "ffn_ratio": r,
            "cat_gmacs": round(cat.total / 1e9, 3),
            "vit_gmacs": round(vit.total / 1e9, 3),
            "ratio": round(cat.total / vit.total, 4),
            "cat_params": cat.param_count,
            "vit_params": vit.param_count,
            "cat_fpp": round(cat.fpp, 2),
            "vit_fpp": round(vit.fpp, 2),
        })
    for row in rows:
        print("  ".join(f"{k}={v}" for k, v in row.items()))
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
