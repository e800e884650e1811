"""Command line entry point: train, eval, flops, bench, gradcheck, dump-rope.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

from .errors import CatError, ConfigError

log = logging.getLogger("crossaxis")

O_N_CLAIM = "claimed complexity O(S^2) = O(N): exponent 1.0 in token count"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _csv_ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crossaxis", description="Cross-axis transformer toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a flat JSON config")
    t.add_argument("--config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out-dir")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="CIFAR-10 directory, or 'synthetic'")
    e.add_argument("--batch-size", type=int, default=256)

    f = sub.add_parser("flops", help="analytic FLOP / parameter report")
    f.add_argument("--config")
    f.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    f.add_argument("--paper-preset", action="store_true")
    f.add_argument("--out-dir")

    b = sub.add_parser("bench", help="contraction scaling: analytic counts, timings, fitted exponents")
    b.add_argument("--sizes", type=_csv_ints, default=[8, 16, 32, 64])
    b.add_argument("--d", type=int, default=64)
    b.add_argument("--heads", type=int, default=1)
    b.add_argument("--no-time", action="store_true")

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--full-model", action="store_true")
    g.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("dump-rope", help="write rotary tables as CSV")
    r.add_argument("--rows", type=int, required=True)
    r.add_argument("--cols", type=int, required=True)
    r.add_argument("--head-dim", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--no-aspect", action="store_true")
    return p


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    from .config import load_config, snapshot
    from .train import smoothed, train

    overrides = list(args.set)
    if args.out_dir:
        overrides.append(f"out_dir={args.out_dir}")
    model_cfg, train_cfg = load_config(args.config, overrides)
    snap = snapshot(model_cfg, train_cfg)
    os.makedirs(train_cfg.out_dir, exist_ok=True)
    with open(os.path.join(train_cfg.out_dir, "config.json"), "w") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True)
        fh.write("\n")

    def progress(step, loss, acc):
        if step % 50 == 0:
            log.info("step %d loss %.4f acc %.3f", step, loss, acc)

    res = train(model_cfg, train_cfg, snapshot=snap, progress=progress)
    losses = [r[2] for r in res.rows]
    final = res.evals[-1]
    print(f"steps {len(res.rows)}  initial loss {losses[0]:.4f}  final smoothed loss {smoothed(losses)[-1]:.4f}")
    print(f"eval loss {final[1]:.4f}  eval accuracy {final[2]:.4f}")
    print(f"wrote {os.path.join(train_cfg.out_dir, 'metrics.csv')}, eval.csv, final.ckpt")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .config import model_config_from_dict, train_config_from_dict
    from .data import load_cifar10, synthetic_dataset
    from .train import evaluate, synthetic_spec

    ckpt = load_checkpoint(args.checkpoint)
    model_cfg = model_config_from_dict(ckpt.config)
    if args.data == "synthetic":
        train_cfg = train_config_from_dict(ckpt.config)
        n_train = train_cfg.train_samples or 3200
        data = synthetic_dataset(synthetic_spec(model_cfg, train_cfg), train_cfg.val_samples or 512, offset=n_train)
    else:
        data = load_cifar10(args.data, "test")
    res = evaluate(ckpt.params, model_cfg, data, args.batch_size)
    print(f"samples {len(data)}  loss {res['loss']:.4f}  accuracy {res['accuracy']:.4f}  (step {ckpt.step})")
    return 0


def cmd_flops(args) -> int:
    from .config import load_config
    from .flops import fit_scaling_exponent, flops_model, large_preset

    if args.paper_preset:
        reports = [flops_model(large_preset("cat")), flops_model(large_preset("vit_baseline"))]
        print("large preset: 224px images (assumed), patch 8, hidden 1024, 8 heads, 5 layers, FFN ratio 1")
    else:
        if not args.config and not args.set:
            raise UsageError("flops: give --config/--set or --paper-preset")
        model_cfg, _ = load_config(args.config, args.set)
        reports = [flops_model(model_cfg)]
    for rep in reports:
        print(rep.table())
        print()
    for rep in reports:
        print(rep.csv(), end="")
    if len(reports) == 2:
        cat, vit = reports
        print(f"\nCAT/ViT total ratio {cat.total / vit.total:.4f} (reference 24.85/37.23 = {24.85 / 37.23:.4f})")
        print(f"ViT FPP (macs) {vit.fpp:.2f} (reference 784.94); CAT FPP (macs) {cat.fpp:.2f} (reference 760.24)")
        slope = fit_scaling_exponent("cross_axis", [8, 16, 32, 64], 64)
        print(f"cross-axis contraction exponent {slope:.3f} in token count; {O_N_CLAIM}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        for rep in reports:
            name = rep.label.split()[0]
            with open(os.path.join(args.out_dir, f"flops_{name}.csv"), "w") as fh:
                fh.write(rep.csv())
    return 0


def cmd_bench(args) -> int:
    from .flops import scaling_table

    if args.d % args.heads:
        raise UsageError("bench: --d must be divisible by --heads")
    res = scaling_table(args.sizes, args.d, timed=not args.no_time, heads=args.heads)
    timed = not args.no_time
    head = f"{'S':>4} {'N':>6} {'cross_macs':>14} {'quad_macs':>16}"
    if timed:
        head += f" {'cross_s':>10} {'quad_s':>10}"
    print(head)
    for r in res["rows"]:
        line = f"{r['S']:>4} {r['N']:>6} {r['cross_axis_macs']:>14,} {r['quadratic_macs']:>16,}"
        if timed:
            line += f" {r['cross_axis_sec']:>10.5f} {r['quadratic_sec']:>10.5f}"
        print(line)
    ex = res["exponents"]
    print(f"\nanalytic exponent vs N: cross-axis {ex['cross_axis']:.3f}, quadratic {ex['quadratic']:.3f}")
    if timed:
        print(f"timed exponent vs N:    cross-axis {ex['cross_axis_timed']:.3f}, quadratic {ex['quadratic_timed']:.3f}")
    print(f"note: {O_N_CLAIM}; measured analytic exponent is {ex['cross_axis']:.3f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import attention_case, block_case, model_case, op_cases, softmax_attention_case

    cases = op_cases(args.seed) + [attention_case(args.seed), softmax_attention_case(args.seed), block_case(args.seed)]
    if args.full_model:
        cases += [model_case(args.seed), model_case(args.seed, model_kind="vit_baseline")]
    ok = True
    for case in cases:
        err = case.run()
        passed = err < case.threshold
        ok &= passed
        print(f"{case.name:<22} max rel err {err:.3e}  (< {case.threshold:.0e})  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_dump_rope(args) -> int:
    from .rope import GridSpec, build_tables, write_tables_csv

    try:
        grid = GridSpec(args.rows, args.cols, args.head_dim, aspect=not args.no_aspect)
    except ValueError as e:
        raise UsageError(f"dump-rope: {e}") from None
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(args.out, "w") as fh:
        n = write_tables_csv(build_tables(grid), fh)
    print(f"wrote {n} rows to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "flops": cmd_flops,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "dump-rope": cmd_dump_rope,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr, end="")
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"crossaxis {args.command}: {e}", file=sys.stderr)
        return 2
    except (CatError, OSError, ValueError) as e:
        print(f"crossaxis {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
