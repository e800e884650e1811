"""Dense tensors with a reverse-mode autodiff tape.

Storage is a contiguous row-major numpy buffer (float32 or float64).  A tensor
that was produced from at least one tape-tracked input is itself tracked: the
op appends one node to the tape holding the ids of its inputs and a closure
that maps the output gradient to input gradients.  Untracked tensors never
touch a tape.

Broadcasting is deliberately narrow: the second operand of an elementwise op
must have the same shape, be a Python scalar, or have a shape that is a suffix
of the first operand's shape.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from .errors import (
    AxisOutOfRange,
    DetachedTensor,
    LabelOutOfRange,
    NotScalar,
    ShapeMismatch,
)

DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
Scalar = Union[int, float]


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in DTYPES else np.float32
        arr = np.asarray(data, dtype=dtype, order="C")
        if arr.dtype not in DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}")
        self.data = arr
        self.tape: Optional[Tape] = None
        self.node: Optional[int] = None

    @classmethod
    def _tracked(cls, data: np.ndarray, tape: "Tape", node: int) -> "Tensor":
        t = cls(data, dtype=data.dtype)
        t.tape = tape
        t.node = node
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self) -> str:
        flag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t: Tensor):
    raise NotScalar(f"expected a single-element tensor, got shape {t.shape}")


@dataclass
class Node:
    op: str
    parents: tuple
    backward: Optional[Callable]
    name: Optional[str] = None
    shape: tuple = ()
    dtype: Optional[np.dtype] = None


@dataclass
class Tape:
    """Append-only record of tracked operations.  One tape per training step."""

    nodes: list = field(default_factory=list)
    gradients: dict = field(default_factory=dict)

    def param(self, data, name: str, dtype=None) -> Tensor:
        """Register a named leaf (a parameter or any input we want gradients for)."""
        t = data if isinstance(data, Tensor) else Tensor(data, dtype=dtype)
        self.nodes.append(Node("leaf", (), None, name, t.shape, t.dtype))
        return Tensor._tracked(t.data, self, len(self.nodes) - 1)

    def leaves(self) -> dict:
        return {n.name: i for i, n in enumerate(self.nodes) if n.op == "leaf"}

    def __len__(self) -> int:
        return len(self.nodes)


# --------------------------------------------------------------------------
# instrumentation


@dataclass
class MacCounter:
    """Counts multiply-accumulate iterations executed by matmul kernels."""

    macs: int = 0
    calls: int = 0


_counters: list = []


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    c = MacCounter()
    _counters.append(c)
    try:
        yield c
    finally:
        _counters.remove(c)


def _tally(macs: int) -> None:
    for c in _counters:
        c.macs += macs
        c.calls += 1


# --------------------------------------------------------------------------
# recording helpers


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = None
    for t in inputs:
        if t.tracked:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
    if tape is None:
        return Tensor(out, dtype=out.dtype)
    parents = tuple(t.node if t.tracked else None for t in inputs)
    tape.nodes.append(Node(op, parents, backward))
    return Tensor._tracked(np.asarray(out, order="C"), tape, len(tape.nodes) - 1)


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def _is_suffix(small: tuple, big: tuple) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


# --------------------------------------------------------------------------
# linear algebra and layout


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over equal leading dims; no batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"contraction mismatch {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"batch dims differ {a.shape[:-2]} vs {b.shape[:-2]}")
    out = np.matmul(a.data, b.data)
    _tally(math.prod(a.shape) * b.shape[-1])
    ad, bd = a.data, b.data

    def backward(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _record("matmul", out, (a, b), backward)


def transpose(a: Tensor, axis0: int, axis1: int) -> Tensor:
    a = as_tensor(a)
    i, j = _norm_axis(axis0, a.ndim), _norm_axis(axis1, a.ndim)
    if i == j:
        raise AxisOutOfRange(f"transpose axes must differ, got {axis0} and {axis1}")
    out = np.ascontiguousarray(np.swapaxes(a.data, i, j))

    def backward(g):
        return (np.ascontiguousarray(np.swapaxes(g, i, j)),)

    return _record("transpose", out, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return _record("reshape", out, (a,), backward)


def take(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    out = np.ascontiguousarray(a.data[index])
    src, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        full[index] = g
        return (full,)

    return _record("take", out, (a,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: x[..., k] @ weight[k, n] + bias[n]."""
    x = as_tensor(x)
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), weight)
    if bias is not None:
        y = add(y, bias)
    return reshape(y, lead + (y.shape[-1],))


# --------------------------------------------------------------------------
# elementwise


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not _is_suffix(b.shape, a.shape):
        raise ShapeMismatch(f"{op}: shape {b.shape} does not broadcast onto {a.shape}")


def add(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return _add_scalar(a, float(b))
    b = as_tensor(b)
    _check_pair(a, b, "add")
    bshape = b.shape

    def backward(g):
        return g, _unbroadcast(g, bshape)

    return _record("add", a.data + b.data, (a, b), backward)


def _add_scalar(a: Tensor, s: float) -> Tensor:
    return _record("add", a.data + a.dtype.type(s), (a,), lambda g: (g,))


def sub(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return _add_scalar(a, -float(b))
    b = as_tensor(b)
    _check_pair(a, b, "sub")
    bshape = b.shape

    def backward(g):
        return g, -_unbroadcast(g, bshape)

    return _record("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    b = as_tensor(b)
    _check_pair(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, _unbroadcast(g * ad, bd.shape)

    return _record("mul", ad * bd, (a, b), backward)


def scale(a: Tensor, s: Scalar) -> Tensor:
    a = as_tensor(a)
    s = a.dtype.type(s)
    return _record("scale", a.data * s, (a,), lambda g: (g * s,))


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Dispatch by name: one of add, sub, mul, scale."""
    if op == "scale":
        return scale(a, b)
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis), dtype=a.dtype)
    src = a.shape
    axes = _axes(axis, a.ndim)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), src).copy(),)

    return _record("sum", out, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    n = math.prod(a.shape[i] for i in axes)
    return scale(sum(a, axis), 1.0 / n)


def _axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(_norm_axis(i, ndim) for i in axis))


# --------------------------------------------------------------------------
# normalization and nonlinearities


def _normalize_last(x: np.ndarray, eps: float):
    # statistics in f64 even for f32 inputs: a large common offset would
    # otherwise leave an f32-sized residue in the centred values
    x64 = x.astype(np.float64, copy=False)
    mu = x64.mean(axis=-1, keepdims=True)
    xc = x64 - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return (xc * rstd).astype(x.dtype, copy=False), rstd.astype(x.dtype, copy=False)


def _normalize_backward(dxhat: np.ndarray, xhat: np.ndarray, rstd: np.ndarray) -> np.ndarray:
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return rstd * (dxhat - m1 - xhat * m2)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing vector (biased variance), then per-channel affine."""
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    d = x.shape[-1]
    if scale.shape != (d,) or shift.shape != (d,):
        raise ShapeMismatch(f"layer_norm affine must be ({d},), got {scale.shape}/{shift.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    xhat, rstd = _normalize_last(x.data, eps)
    w = scale.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        return (
            _normalize_backward(g * w, xhat, rstd),
            (g * xhat).sum(axis=lead),
            g.sum(axis=lead),
        )

    return _record("layer_norm", xhat * w + shift.data, (x, scale, shift), backward)


def group_norm_heads(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per (position, head) normalization over the dh channels of x[..., H, dh].

    Each head has one scalar scale and shift.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    if x.ndim < 2:
        raise ShapeMismatch(f"group_norm_heads needs [..., H, dh], got {x.shape}")
    h = x.shape[-2]
    if scale.shape != (h,) or shift.shape != (h,):
        raise ShapeMismatch(f"group_norm_heads affine must be ({h},), got {scale.shape}/{shift.shape}")
    xhat, rstd = _normalize_last(x.data, eps)
    w = scale.data[:, None]

    def backward(g):
        lead = tuple(range(g.ndim - 2))
        return (
            _normalize_backward(g * w, xhat, rstd),
            (g * xhat).sum(axis=-1).sum(axis=lead),
            g.sum(axis=-1).sum(axis=lead),
        )

    return _record("group_norm_heads", xhat * w + shift.data[:, None], (x, scale, shift), backward)


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * xd.dtype.type(_SQRT_HALF)))
    out = (xd * cdf).astype(x.dtype, copy=False)

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) * xd.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + xd * pdf),)

    return _record("gelu", out, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Max-subtracted softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", y, (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    b, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(b)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / b),)

    return _record("cross_entropy", loss, (logits,), backward)


# --------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of a scalar loss w.r.t. every named leaf on the tape."""
    if not loss.tracked or loss.tape is not tape:
        raise DetachedTensor("loss was not recorded on this tape")
    if loss.data.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    grads = {loss.node: np.ones_like(loss.data)}
    for nid in range(loss.node, -1, -1):
        g = grads.get(nid)
        node = tape.nodes[nid]
        if g is None or node.backward is None:
            continue
        for pid, pg in zip(node.parents, node.backward(g)):
            if pid is None or pg is None:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
        if nid != loss.node:
            # interior gradients are not needed once propagated
            del grads[nid]
    tape.gradients = grads
    out = {}
    for nid, node in enumerate(tape.nodes):
        if node.op != "leaf":
            continue
        g = grads.get(nid)
        if g is None:
            g = np.zeros(node.shape, dtype=node.dtype)
        out[node.name] = Tensor(g, dtype=g.dtype)
    return out


def grad_check_many(f: Callable[[dict], Tensor], arrays: dict, eps: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``f`` maps a dict of tensors to a scalar tensor.  Every coordinate of every
    array is perturbed; the error at a coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    arrays = {k: np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64) for k, v in arrays.items()}
    tape = Tape()
    loss = f({k: tape.param(v, k) for k, v in arrays.items()})
    analytic = backward(tape, loss)
    worst = 0.0
    for name, base in arrays.items():
        ga = analytic[name].data
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + eps
            fp = f({k: Tensor(v) for k, v in arrays.items()}).item()
            base[idx] = orig - eps
            fm = f({k: Tensor(v) for k, v in arrays.items()}).item()
            base[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(ga[idx] - numeric) / max(1.0, abs(numeric)))
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Single-input form of :func:`grad_check_many`; always evaluates in float64."""
    return grad_check_many(lambda d: f(d["x"]), {"x": x}, eps)
