"""Toy CAT on a 5000-image CIFAR-10 subset for 5 epochs, evaluated on the test batch.

    python3 scripts/cifar_probe.py --data /path/to/cifar-10-batches-bin [--out runs/cifar]
"""

import argparse

from crossaxis.model import CatConfig
from crossaxis.train import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--samples", type=int, default=5000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--kind", default="cat", choices=["cat", "vit_baseline"])
    ap.add_argument("--out", default="runs/cifar")
    args = ap.parse_args()

    model = CatConfig(image_size=32, patch_size=8, hidden=64, heads=4, layers=3, num_classes=10, model_kind=args.kind)
    cfg = TrainConfig(dataset="cifar10", data_dir=args.data, train_samples=args.samples, epochs=args.epochs,
                      batch_size=32, base_lr=args.lr, eval_every=156, out_dir=args.out)
    res = train(model, cfg, progress=lambda s, l, a: s % 100 == 0 and print(f"step {s} loss {l:.4f}"))
    for step, loss, acc in res.evals:
        print(f"eval step {step}: loss {loss:.4f} acc {acc:.4f}")


if __name__ == "__main__":
    main()
