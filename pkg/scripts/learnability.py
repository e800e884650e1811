"""Seeded synthetic 10-class run; prints loss and accuracy milestones.

    python3 scripts/learnability.py [--steps 500] [--lr 1e-3] [--out runs/learnability]
"""

import argparse

from crossaxis.model import CatConfig
from crossaxis.train import TrainConfig, smoothed, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kind", default="cat", choices=["cat", "vit_baseline"])
    ap.add_argument("--imprint", default="constant")
    ap.add_argument("--out", default="runs/learnability")
    args = ap.parse_args()

    model = CatConfig(image_size=16, patch_size=4, hidden=32, heads=4, layers=2, num_classes=10,
                      model_kind=args.kind, imprint_mode=args.imprint)
    cfg = TrainConfig(batch_size=32, base_lr=args.lr, epochs=100, max_steps=args.steps, seed=args.seed,
                      eval_every=100, out_dir=args.out)
    res = train(model, cfg)
    loss = smoothed([r[2] for r in res.rows])
    acc = smoothed([r[3] for r in res.rows])
    print(f"initial loss {res.rows[0][2]:.4f}")
    for step in (50, 100, 200, 300, 400, 500):
        if step <= len(loss):
            print(f"step {step:4d}  smoothed loss {loss[step - 1]:.4f}  smoothed acc {acc[step - 1]:.3f}")
    first = next((i for i, a in enumerate(acc) if a >= 0.9), None)
    print(f"smoothed train accuracy first >= 0.9 at step {first}")
    for step, l, a in res.evals:
        print(f"eval step {step}: loss {l:.4f} acc {a:.4f}")


if __name__ == "__main__":
    main()
