"""AdamW with cosine annealing, the training loop, and evaluation."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .data import Dataset, SyntheticSpec, load_cifar10, synthetic_dataset
from .errors import ConfigError, NonFiniteLoss, ShapeMismatch
from .model import CatConfig, init_params, model_forward

log = logging.getLogger(__name__)

DATASETS = ("synthetic", "cifar10")


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 32
    base_lr: float = 3e-4
    min_lr: float = 0.0
    weight_decay: float = 0.01
    seed: int = 0
    dataset: str = "synthetic"
    data_dir: Optional[str] = None  # cifar10 only
    train_samples: Optional[int] = None  # subset size; synthetic default 3200
    val_samples: Optional[int] = None  # synthetic default 512
    eval_every: int = 0  # steps; 0 evaluates only at the end
    out_dir: str = "runs/default"
    max_steps: Optional[int] = None  # caps epochs * steps_per_epoch
    flip: bool = False  # random horizontal flips
    noise: float = 0.1  # synthetic pixel noise

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.base_lr > self.min_lr >= 0:
            raise ConfigError("need base_lr > min_lr >= 0")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        if self.dataset == "cifar10" and not self.data_dir:
            raise ConfigError("cifar10 needs data_dir")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def cosine_lr(step: int, total: int, base: float, min_lr: float = 0.0) -> float:
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return min_lr + 0.5 * (base - min_lr) * (1.0 + math.cos(math.pi * step / total))


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr: float, weight_decay: float = 0.01):
    """Decoupled weight decay, then a bias-corrected Adam update.  Updates in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        g = g.data if isinstance(g, T.Tensor) else g
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        dt = p.dtype.type
        m, v = state.m[name], state.v[name]
        p -= dt(lr * weight_decay) * p
        m *= dt(b1)
        m += dt(1.0 - b1) * g
        v *= dt(b2)
        v += dt(1.0 - b2) * g * g
        p -= dt(lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(state.eps))
    return params, state


# --------------------------------------------------------------------------
# data


def build_datasets(model: CatConfig, cfg: TrainConfig) -> tuple:
    if cfg.dataset == "cifar10":
        if model.image_size != 32 or model.channels != 3:
            raise ConfigError("cifar10 needs image_size=32 and channels=3")
        train = load_cifar10(cfg.data_dir, "train", cfg.train_samples)
        val = load_cifar10(cfg.data_dir, "test", cfg.val_samples)
        return train, val
    spec = synthetic_spec(model, cfg)
    n_train = cfg.train_samples or 3200
    n_val = cfg.val_samples or 512
    return synthetic_dataset(spec, n_train), synthetic_dataset(spec, n_val, offset=n_train)


def synthetic_spec(model: CatConfig, cfg: TrainConfig) -> SyntheticSpec:
    return SyntheticSpec(
        classes=model.num_classes,
        grid=model.grid,
        patch=model.patch_size,
        channels=model.channels,
        noise=cfg.noise,
        seed=cfg.seed,
    )


# --------------------------------------------------------------------------
# loops


def loss_and_grads(params: dict, images: np.ndarray, labels: np.ndarray, config: CatConfig):
    tape = T.Tape()
    tracked = {k: tape.param(v, k) for k, v in params.items()}
    logits = model_forward(images, tracked, config)
    loss = T.cross_entropy(logits, labels)
    grads = T.backward(tape, loss)
    return loss.item(), logits.data, grads


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    # argmax returns the first maximum: ties go to the lowest class index
    return float((np.argmax(logits, axis=-1) == labels).mean())


def evaluate(params: dict, config: CatConfig, data: Dataset, batch_size: int = 256) -> dict:
    total_loss = 0.0
    correct = 0
    n = len(data)
    for i in range(0, n, batch_size):
        x, y = data.images[i:i + batch_size], data.labels[i:i + batch_size]
        logits = model_forward(x, params, config)
        total_loss += T.cross_entropy(logits, y).item() * len(y)
        correct += int((np.argmax(logits.data, axis=-1) == y).sum())
    return {"loss": total_loss / n, "accuracy": correct / n}


@dataclass
class TrainResult:
    params: dict
    state: OptimizerState
    rows: list  # (step, lr, loss, acc)
    evals: list  # (step, loss, acc)
    out_dir: str


def _fmt(x: float) -> str:
    return repr(float(x))


def train(
    model: CatConfig,
    cfg: TrainConfig,
    data: Optional[tuple] = None,
    snapshot: Optional[dict] = None,
    progress: Optional[Callable[[int, float, float], None]] = None,
) -> TrainResult:
    """Seeded training run writing metrics.csv, eval.csv and checkpoints under cfg.out_dir."""
    train_set, val_set = data if data is not None else build_datasets(model, cfg)
    n = len(train_set)
    per_epoch = max(1, n // cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    snapshot = snapshot if snapshot is not None else {**asdict(model), **asdict(cfg)}

    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    eval_path = os.path.join(cfg.out_dir, "eval.csv")
    params = init_params(model, cfg.seed)
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    rows, evals = [], []
    best = -1.0

    def checkpoint(name: str, step: int) -> None:
        ckpt = Checkpoint(params, snapshot, step, state.m, state.v)
        save_checkpoint(os.path.join(cfg.out_dir, name), ckpt)

    def run_eval(step: int) -> None:
        nonlocal best
        res = evaluate(params, model, val_set)
        evals.append((step, res["loss"], res["accuracy"]))
        with open(eval_path, "a") as fh:
            fh.write(f"{step},{_fmt(res['loss'])},{_fmt(res['accuracy'])}\n")
        log.info("eval step %d loss %.4f acc %.4f", step, res["loss"], res["accuracy"])
        if res["accuracy"] > best:
            best = res["accuracy"]
            checkpoint("best.ckpt", step)

    with open(metrics_path, "w") as fh:
        fh.write("step,lr,loss,acc\n")
    with open(eval_path, "w") as fh:
        fh.write("step,loss,acc\n")

    step = 0
    with open(metrics_path, "a") as metrics:
        while step < total:
            order = rng.permutation(n)
            for b in range(per_epoch):
                if step >= total:
                    break
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                x, y = train_set.images[idx], train_set.labels[idx]
                if cfg.flip:
                    flips = rng.random(len(idx)) < 0.5
                    x = np.where(flips[:, None, None, None], x[..., ::-1], x)
                lr = cosine_lr(step, total, cfg.base_lr, cfg.min_lr)
                loss, logits, grads = loss_and_grads(params, x, y, model)
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"loss {loss} at step {step}")
                adamw_step(params, grads, state, lr, cfg.weight_decay)
                acc = accuracy(logits, y)
                rows.append((step, lr, loss, acc))
                metrics.write(f"{step},{_fmt(lr)},{_fmt(loss)},{_fmt(acc)}\n")
                metrics.flush()
                if progress is not None:
                    progress(step, loss, acc)
                step += 1
                if cfg.eval_every and step % cfg.eval_every == 0 and step < total:
                    run_eval(step)
    run_eval(step)
    checkpoint("final.ckpt", step)
    return TrainResult(params, state, rows, evals, cfg.out_dir)


def smoothed(values, window: int = 20) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
