"""Multi-scale rotary axial position embeddings for a 2D patch grid.

Every patch coordinate is mapped into [-pi, pi) independently of grid size.
Even channels carry the row coordinate and odd channels the column
coordinate.  Channel c is rotated together with channel c + dh/2, which
carries the same axis and frequency, so each pair sees a planar rotation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .errors import BadHeadDim, ShapeMismatch
from .tensor import Tensor, _record, as_tensor

BASE = 10000.0


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    head_dim: int
    aspect: bool = True  # scale the shorter axis on non-square grids

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be positive, got {self.rows}x{self.cols}")
        _check_head_dim(self.head_dim)


@dataclass(frozen=True)
class RotaryTables:
    cos: np.ndarray  # [rows, cols, dh]
    sin: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.cos.shape

    def astype(self, dtype) -> "RotaryTables":
        return RotaryTables(self.cos.astype(dtype), self.sin.astype(dtype))


def _check_head_dim(head_dim: int) -> None:
    if head_dim < 4 or head_dim % 4:
        raise BadHeadDim(f"head_dim must be a positive multiple of 4, got {head_dim}")


def decay_frequencies(head_dim: int) -> np.ndarray:
    _check_head_dim(head_dim)
    m = head_dim // 2
    j = np.arange(m)
    half = BASE ** (-2.0 * (j // 2) / m)
    return np.concatenate([half, half])


def axis_coordinates(n: int) -> np.ndarray:
    """(2i - n) / n * pi for i in [0, n)."""
    i = np.arange(n, dtype=np.float64)
    return (i * 2 - n) / n * math.pi


def axial_angles(grid: GridSpec) -> np.ndarray:
    u = axis_coordinates(grid.rows)
    v = axis_coordinates(grid.cols)
    if grid.aspect and grid.rows != grid.cols:
        ratio = min(grid.rows, grid.cols) / max(grid.rows, grid.cols)
        if grid.rows < grid.cols:
            u = u * ratio
        else:
            v = v * ratio
    freq = decay_frequencies(grid.head_dim)
    even = np.arange(grid.head_dim) % 2 == 0
    coord = np.where(even, u[:, None, None], v[None, :, None])
    return coord * freq


def build_tables(grid: GridSpec, dtype=np.float64) -> RotaryTables:
    theta = axial_angles(grid)
    return RotaryTables(np.cos(theta).astype(dtype), np.sin(theta).astype(dtype))


def rotate_half(x: np.ndarray) -> np.ndarray:
    h = x.shape[-1] // 2
    return np.concatenate([-x[..., h:], x[..., :h]], axis=-1)


def apply_rotary(x: Tensor, tables: RotaryTables) -> Tensor:
    """Rotate x[..., rows, cols, H, dh] by the grid's angle tables, per head."""
    x = as_tensor(x)
    rows, cols, dh = tables.shape
    if x.ndim < 4 or x.shape[-4:-2] != (rows, cols) or x.shape[-1] != dh:
        raise ShapeMismatch(f"x {x.shape} does not match rotary tables {tables.shape}")
    cos = tables.cos.astype(x.dtype, copy=False)[:, :, None, :]
    sin = tables.sin.astype(x.dtype, copy=False)[:, :, None, :]
    out = x.data * cos + rotate_half(x.data) * sin

    def backward(g):
        # transpose of rotate_half is -rotate_half
        return (g * cos - rotate_half(g * sin),)

    return _record("rotary", out, (x,), backward)


def write_tables_csv(tables: RotaryTables, fh: TextIO) -> int:
    """Write (row, col, channel, cos, sin) rows; returns the row count."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["row", "col", "channel", "cos", "sin"])
    rows, cols, dh = tables.shape
    n = 0
    for r in range(rows):
        for c in range(cols):
            for ch in range(dh):
                w.writerow([r, c, ch, repr(float(tables.cos[r, c, ch])), repr(float(tables.sin[r, c, ch]))])
                n += 1
    return n
