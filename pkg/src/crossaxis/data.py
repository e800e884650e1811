"""CIFAR-10 binary reader and a seeded synthetic image dataset."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import MissingFile, TruncatedRecord

RECORD = 1 + 3 * 32 * 32
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    images: np.ndarray  # [n, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [n] int64

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n])

    def __iter__(self) -> Iterator[tuple]:
        return zip(self.images, self.labels)


def parse_cifar10_records(raw: bytes) -> Dataset:
    if len(raw) % RECORD:
        raise TruncatedRecord(f"{len(raw)} bytes is not a multiple of {RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / np.float32(255.0)
    return Dataset(images, labels)


def _resolve_dir(path: str) -> str:
    nested = os.path.join(path, "cifar-10-batches-bin")
    return nested if os.path.isdir(nested) else path


def load_cifar10(path: str, split: str = "train", limit: Optional[int] = None) -> Dataset:
    """Read the standard binary batches from ``path`` (or its cifar-10-batches-bin child)."""
    names = {"train": TRAIN_FILES, "test": TEST_FILES}[split]
    root = _resolve_dir(path)
    parts = []
    count = 0
    for name in names:
        fn = os.path.join(root, name)
        if not os.path.isfile(fn):
            raise MissingFile(fn)
        with open(fn, "rb") as fh:
            parts.append(parse_cifar10_records(fh.read()))
        count += len(parts[-1])
        if limit is not None and count >= limit:
            break
    ds = Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]))
    return ds.subset(limit) if limit is not None else ds


# --------------------------------------------------------------------------
# synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 10
    grid: int = 4
    patch: int = 4
    channels: int = 3
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.classes <= 16:
            raise ValueError("synthetic dataset supports 1..16 classes")

    @property
    def image_size(self) -> int:
        return self.grid * self.patch


def _class_colors(classes: int) -> np.ndarray:
    # Fibonacci points on the unit sphere: every colour is an extreme point,
    # so a one-vs-rest affine score can isolate each class
    i = np.arange(classes) + 0.5
    z = 1.0 - 2.0 * i / classes
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


# integer cycles per patch along (x, y): every grating sums to zero over a patch
_WAVES = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2), (2, 1), (1, 2), (2, -1), (1, -2), (2, 2), (2, -2))


def synthetic_sample(spec: SyntheticSpec, index: int) -> tuple:
    """Image and label for sample ``index``; depends only on (spec, index).

    Class c gets a fixed colour offset and a fixed +-1 brightness pattern
    over the patch grid (together these make patch means linearly
    separable), plus a grating with a class-specific orientation and
    frequency.  Grating phase and pixel noise vary per sample.
    """
    label = index % spec.classes
    rng = np.random.default_rng((spec.seed, index))
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size] / spec.patch
    kx, ky = _WAVES[label % len(_WAVES)]
    phase = rng.uniform(0.0, 2.0 * np.pi)
    grating = np.sin(2.0 * np.pi * (kx * xx + ky * yy) + phase)
    color = _class_colors(spec.classes)[label]
    if spec.channels != 3:
        color = np.resize(color, spec.channels)
    layout = np.kron(_class_layout(spec, label), np.ones((spec.patch, spec.patch)))
    img = 0.5 + 0.15 * color[:, None, None] + 0.1 * layout + 0.15 * grating[None]
    img = img + spec.noise * rng.standard_normal((spec.channels, size, size))
    return np.clip(img, 0.0, 1.0).astype(np.float32), label


def _class_layout(spec: SyntheticSpec, label: int) -> np.ndarray:
    rng = np.random.default_rng((spec.seed, 2**31, label))
    return rng.choice([-1.0, 1.0], size=(spec.channels, spec.grid, spec.grid))


def synthetic_dataset(spec: SyntheticSpec, n: int, offset: int = 0) -> Dataset:
    samples = [synthetic_sample(spec, offset + i) for i in range(n)]
    return Dataset(np.stack([s[0] for s in samples]), np.array([s[1] for s in samples], dtype=np.int64))


def iter_synthetic(spec: SyntheticSpec) -> Iterator[tuple]:
    i = 0
    while True:
        yield synthetic_sample(spec, i)
        i += 1


def patch_means(images: np.ndarray, patch: int) -> np.ndarray:
    """Per-patch, per-channel means flattened to one feature vector per image."""
    n, c, h, w = images.shape
    s = h // patch
    return images.reshape(n, c, s, patch, s, patch).mean(axis=(3, 5)).reshape(n, -1)


def linear_probe_accuracy(features: np.ndarray, labels: np.ndarray, classes: int, ridge: float = 1e-3) -> float:
    """Fit a ridge least-squares one-hot probe in closed form and score it on the same data."""
    x = np.hstack([features, np.ones((len(features), 1))])
    y = np.eye(classes)[labels]
    w = np.linalg.solve(x.T @ x + ridge * np.eye(x.shape[1]), x.T @ y)
    return float(((x @ w).argmax(axis=1) == labels).mean())
