"""Cross-axis attention and the quadratic softmax baseline.

Tensor layout for the grid operators is [..., S, S, H, dh] (rows, cols,
heads, head channels).  The cross-axis contraction moves heads in front so
that every batched product runs per head:

    A[r, i, j]   = sum_e q[r, i, e] k[r, j, e]          rows as batch
    O[s, x, :]   = sum_j A[x, s, j] v[s, j, :]          swapped axis as batch
    out[x, s, :] = O[s, x, :]

No softmax or normalization sits between the two products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import NotSquareGrid, ShapeMismatch
from .rope import RotaryTables, apply_rotary
from .tensor import Tensor

GAMMA_MODES = ("retnet", "ones")
POS_MODES = ("rotary", "sinusoidal", "none")


@dataclass(frozen=True)
class AttentionConfig:
    hidden: int
    heads: int
    grid: int
    gamma_mode: str = "retnet"
    use_rotary: bool = True
    eps: float = 1e-5

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValueError(f"gamma_mode must be one of {GAMMA_MODES}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class AttentionParams:
    """Weights of one attention layer.  The group-norm affine is cross-axis only."""

    w_qkv: Tensor  # [d, 3d]
    b_qkv: Tensor  # [3d]
    w_out: Tensor  # [d, d]
    b_out: Tensor  # [d]
    gn_scale: Optional[Tensor] = None  # [H]
    gn_shift: Optional[Tensor] = None


def head_gammas(heads: int, mode: str = "retnet") -> np.ndarray:
    """Per-head key scaling; the retention scheme uses 1 - 2**(-5 - h)."""
    if mode == "ones":
        return np.ones(heads)
    if mode == "retnet":
        return 1.0 - 2.0 ** (-5.0 - np.arange(heads))
    raise ValueError(f"unknown gamma mode {mode!r}")


def split_heads(x: Tensor, heads: int) -> Tensor:
    return T.reshape(x, x.shape[:-1] + (heads, x.shape[-1] // heads))


def merge_heads(x: Tensor) -> Tensor:
    return T.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def qkv_project(x: Tensor, params: AttentionParams, heads: int):
    """One affine map to 3d channels, split into q, k, v of shape [..., H, dh]."""
    x = T.as_tensor(x)
    d = x.shape[-1]
    if params.w_qkv.shape != (d, 3 * d):
        raise ShapeMismatch(f"w_qkv {params.w_qkv.shape} does not fit hidden {d}")
    y = T.linear(x, params.w_qkv, params.b_qkv)
    return tuple(split_heads(T.take(y, i * d, (i + 1) * d), heads) for i in range(3))


def gamma_scale_keys(k: Tensor, gammas) -> Tensor:
    k = T.as_tensor(k)
    gammas = np.asarray(gammas, dtype=k.dtype)
    if gammas.shape != (k.shape[-2],):
        raise ShapeMismatch(f"{gammas.shape[0]} gammas for {k.shape[-2]} heads")
    table = np.repeat(gammas[:, None], k.shape[-1], axis=1)
    return T.mul(k, Tensor(table, dtype=k.dtype))


def _heads_first(x: Tensor) -> Tensor:
    # [..., r, c, H, e] -> [..., H, r, c, e]
    return T.transpose(T.transpose(x, -2, -4), -2, -3)


def _heads_last(x: Tensor) -> Tensor:
    # [..., H, r, c, e] -> [..., r, c, H, e]
    return T.transpose(T.transpose(x, -4, -3), -3, -2)


def cross_axis_contract(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.ndim < 4:
        raise ShapeMismatch(f"expected [..., S, S, H, dh], got {q.shape}")
    if q.shape[-4] != q.shape[-3]:
        raise NotSquareGrid(f"cross-axis contraction needs a square grid, got {q.shape[-4]}x{q.shape[-3]}")
    if not (q.shape == k.shape == v.shape):
        raise ShapeMismatch(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    qh, kh, vh = _heads_first(q), _heads_first(k), _heads_first(v)
    scores = T.matmul(qh, T.transpose(kh, -1, -2))  # [..., H, r, i, j]
    mixed = T.matmul(T.transpose(scores, -3, -2), vh)  # [..., H, s, x, e]
    return _heads_last(T.transpose(mixed, -3, -2))


def cross_axis_attention(
    x: Tensor,
    params: AttentionParams,
    config: AttentionConfig,
    tables: Optional[RotaryTables] = None,
    imprint: Optional[Tensor] = None,
) -> Tensor:
    """Full cross-axis attention layer on x[..., S, S, d]."""
    x = T.as_tensor(x)
    if imprint is not None:
        x = T.add(x, imprint)
    q, k, v = qkv_project(x, params, config.heads)
    k = gamma_scale_keys(k, head_gammas(config.heads, config.gamma_mode))
    if config.use_rotary:
        if tables is None:
            raise ValueError("use_rotary set but no rotary tables given")
        q, k = apply_rotary(q, tables), apply_rotary(k, tables)
    o = cross_axis_contract(q, k, v)
    o = T.group_norm_heads(o, params.gn_scale, params.gn_shift, config.eps)
    return T.linear(merge_heads(o), params.w_out, params.b_out)


def softmax_attention(
    x: Tensor,
    params: AttentionParams,
    heads: int,
    pos_mode: str = "rotary",
    tables: Optional[RotaryTables] = None,
    return_weights: bool = False,
):
    """Standard multi-head attention over flattened tokens x[..., N, d].

    With ``pos_mode='rotary'`` q and k are rotated on the unflattened grid
    given by ``tables``; other modes leave q and k untouched here (additive
    embeddings are the caller's job).
    """
    x = T.as_tensor(x)
    if pos_mode not in POS_MODES:
        raise ValueError(f"pos_mode must be one of {POS_MODES}")
    n, d = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    q, k, v = qkv_project(x, params, heads)  # [..., N, H, dh]
    if pos_mode == "rotary":
        if tables is None:
            raise ValueError("rotary mode needs tables")
        rows, cols, _ = tables.shape
        if rows * cols != n:
            raise ShapeMismatch(f"{n} tokens do not fill a {rows}x{cols} grid")
        grid_shape = lead + (rows, cols) + q.shape[-2:]
        q = T.reshape(apply_rotary(T.reshape(q, grid_shape), tables), lead + (n,) + q.shape[-2:])
        k = T.reshape(apply_rotary(T.reshape(k, grid_shape), tables), lead + (n,) + k.shape[-2:])
    q, k, v = (T.transpose(t, -3, -2) for t in (q, k, v))  # [..., H, N, dh]
    dh = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k, -1, -2)), 1.0 / math.sqrt(dh))
    weights = T.softmax(scores)
    o = T.transpose(T.matmul(weights, v), -3, -2)  # [..., N, H, dh]
    out = T.linear(T.reshape(o, lead + (n, d)), params.w_out, params.b_out)
    return (out, weights) if return_weights else out


def naive_cross_axis_oracle(q, k, v) -> np.ndarray:
    """Loop evaluation of the contraction for q, k, v of shape [S, S, H, dh]."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s_, _, heads, dh = q.shape
    ql, kl, vl = q.tolist(), k.tolist(), v.tolist()
    out = [[[[0.0] * dh for _ in range(heads)] for _ in range(s_)] for _ in range(s_)]
    for h in range(heads):
        for x in range(s_):
            for s in range(s_):
                acc = out[x][s][h]
                qv = ql[x][s][h]
                for j in range(s_):
                    kv = kl[x][j][h]
                    a = 0.0
                    for e in range(dh):
                        a += qv[e] * kv[e]
                    vv = vl[s][j][h]
                    for c in range(dh):
                        acc[c] += a * vv[c]
    return np.array(out)
