"""Catalogue of finite-difference gradient checks over every differentiable op."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, AttentionParams, cross_axis_attention, softmax_attention
from .model import CatConfig, cat_block, init_params, model_forward, rotary_tables
from .rope import GridSpec, apply_rotary, build_tables

OP_THRESHOLD = 1e-6
MODEL_THRESHOLD = 1e-4


@dataclass
class Case:
    name: str
    fn: Callable[[dict], T.Tensor]
    inputs: dict
    threshold: float = OP_THRESHOLD

    def run(self, eps: float = 1e-5) -> float:
        return T.grad_check_many(self.fn, self.inputs, eps)


def _weighted_sum(y: T.Tensor, w: np.ndarray) -> T.Tensor:
    # a fixed random projection makes every output coordinate matter
    return T.sum(T.mul(y, T.Tensor(w, dtype=y.dtype)))


def op_cases(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)

    def r(*shape, scale=1.0):
        return rng.standard_normal(shape) * scale

    w6 = r(2, 3)
    cases = [
        Case("add", lambda d: _weighted_sum(T.add(d["a"], d["b"]), w6), {"a": r(2, 3), "b": r(2, 3)}),
        Case("add_suffix", lambda d: _weighted_sum(T.add(d["a"], d["b"]), w6), {"a": r(2, 3), "b": r(3)}),
        Case("sub", lambda d: _weighted_sum(T.sub(d["a"], d["b"]), w6), {"a": r(2, 3), "b": r(3)}),
        Case("mul", lambda d: _weighted_sum(T.mul(d["a"], d["b"]), w6), {"a": r(2, 3), "b": r(2, 3)}),
        Case("mul_suffix", lambda d: _weighted_sum(T.mul(d["a"], d["b"]), w6), {"a": r(2, 3), "b": r(3)}),
        Case("scale", lambda d: _weighted_sum(T.scale(d["a"], -1.7), w6), {"a": r(2, 3)}),
    ]
    wm = r(2, 3, 4)
    cases.append(Case("matmul", lambda d: _weighted_sum(T.matmul(d["a"], d["b"]), wm), {"a": r(2, 3, 5), "b": r(2, 5, 4)}))
    wt = r(3, 2, 4)
    cases.append(Case("transpose", lambda d: _weighted_sum(T.transpose(d["a"], 0, 1), wt), {"a": r(2, 3, 4)}))
    wr = r(4, 6)
    cases.append(Case("reshape", lambda d: _weighted_sum(T.reshape(d["a"], (4, 6)), wr), {"a": r(2, 3, 4)}))
    wk = r(2, 2)
    cases.append(Case("take", lambda d: _weighted_sum(T.take(d["a"], 1, 3), wk), {"a": r(2, 5)}))
    wsum, wmean = r(2, 4), r(3)
    cases.append(Case("sum_axis", lambda d: _weighted_sum(T.sum(d["a"], axis=1), wsum), {"a": r(2, 3, 4)}))
    cases.append(Case("mean_axes", lambda d: _weighted_sum(T.mean(d["a"], axis=(0, 2)), wmean), {"a": r(2, 3, 4)}))
    wl = r(3, 8)
    cases.append(
        Case(
            "layer_norm",
            lambda d: _weighted_sum(T.layer_norm(d["x"], d["g"], d["b"]), wl),
            {"x": r(3, 8), "g": r(8), "b": r(8)},
        )
    )
    cases.append(
        Case(
            "layer_norm_sumsq",
            lambda d: T.sum(T.mul(T.layer_norm(d["x"], T.Tensor(np.ones(8)), T.Tensor(np.zeros(8))),
                                  T.layer_norm(d["x"], T.Tensor(np.ones(8)), T.Tensor(np.zeros(8))))),
            {"x": r(8)},
        )
    )
    wg = r(2, 2, 4)
    cases.append(
        Case(
            "group_norm_heads",
            lambda d: _weighted_sum(T.group_norm_heads(d["x"], d["g"], d["b"]), wg),
            {"x": r(2, 2, 4), "g": r(2), "b": r(2)},
        )
    )
    cases.append(Case("gelu", lambda d: _weighted_sum(T.gelu(d["x"]), w6), {"x": r(2, 3, scale=2.0)}))
    ws = r(3, 5)
    cases.append(Case("softmax", lambda d: _weighted_sum(T.softmax(d["x"]), ws), {"x": r(3, 5)}))
    labels = rng.integers(0, 5, size=4)
    cases.append(Case("cross_entropy", lambda d: T.cross_entropy(d["x"], labels), {"x": r(4, 5)}))

    tables = build_tables(GridSpec(2, 3, 8))
    wrot = r(2, 3, 2, 8)
    cases.append(Case("rotary", lambda d: _weighted_sum(apply_rotary(d["x"], tables), wrot), {"x": r(2, 3, 2, 8)}))
    return cases


def attention_case(seed: int = 0, S: int = 4, d: int = 8, H: int = 2) -> Case:
    """Full cross-axis attention layer, scalarized, gradients for input and every weight."""
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(d, H, S)
    tables = build_tables(GridSpec(S, S, d // H))
    w = rng.standard_normal((S, S, d))

    def fn(p):
        params = AttentionParams(p["w_qkv"], p["b_qkv"], p["w_out"], p["b_out"], p["gn_scale"], p["gn_shift"])
        return _weighted_sum(cross_axis_attention(p["x"], params, cfg, tables, p["imprint"]), w)

    inputs = {
        "x": rng.standard_normal((S, S, d)),
        "imprint": rng.standard_normal((S, S, d)) * 0.5,
        "w_qkv": rng.standard_normal((d, 3 * d)) * 0.5,
        "b_qkv": rng.standard_normal(3 * d) * 0.1,
        "w_out": rng.standard_normal((d, d)) * 0.5,
        "b_out": rng.standard_normal(d) * 0.1,
        "gn_scale": 1.0 + rng.standard_normal(H) * 0.2,
        "gn_shift": rng.standard_normal(H) * 0.1,
    }
    return Case("cross_axis_attention", fn, inputs, MODEL_THRESHOLD)


def softmax_attention_case(seed: int = 0, S: int = 2, d: int = 8, H: int = 2) -> Case:
    rng = np.random.default_rng(seed)
    tables = build_tables(GridSpec(S, S, d // H))
    n = S * S
    w = rng.standard_normal((n, d))

    def fn(p):
        params = AttentionParams(p["w_qkv"], p["b_qkv"], p["w_out"], p["b_out"])
        return _weighted_sum(softmax_attention(p["x"], params, H, "rotary", tables), w)

    inputs = {
        "x": rng.standard_normal((n, d)),
        "w_qkv": rng.standard_normal((d, 3 * d)) * 0.5,
        "b_qkv": rng.standard_normal(3 * d) * 0.1,
        "w_out": rng.standard_normal((d, d)) * 0.5,
        "b_out": rng.standard_normal(d) * 0.1,
    }
    return Case("softmax_attention", fn, inputs, MODEL_THRESHOLD)


def toy_model_config(**overrides) -> CatConfig:
    base = dict(image_size=16, patch_size=8, hidden=16, heads=2, layers=2, num_classes=10)
    base.update(overrides)
    return CatConfig(**base)


def _perturbed_params(config: CatConfig, rng: np.random.Generator) -> dict:
    # init weights are tiny (std 0.02); widen them so every path carries signal
    params = init_params(config, 0, dtype=np.float64)
    return {k: v + rng.standard_normal(v.shape) * 0.3 for k, v in params.items()}


def block_case(seed: int = 0) -> Case:
    rng = np.random.default_rng(seed)
    config = toy_model_config(image_size=32)  # 4x4 grid
    params = {k: v for k, v in _perturbed_params(config, rng).items() if k.startswith("layer0.")}
    x = rng.standard_normal((4, 4, config.hidden))
    imprint = rng.standard_normal((4, 4, config.hidden)) * 0.5
    w = rng.standard_normal((4, 4, config.hidden))
    tables = rotary_tables(config.grid, config.head_dim)

    def fn(p):
        return _weighted_sum(cat_block(p["x"], p, 0, config, tables, T.Tensor(imprint)), w)

    return Case("cat_block", fn, {"x": x, **params}, MODEL_THRESHOLD)


def model_case(seed: int = 0, **overrides) -> Case:
    """Whole classifier on a 16x16 image batch, loss = cross entropy."""
    rng = np.random.default_rng(seed)
    config = toy_model_config(**overrides)
    params = _perturbed_params(config, rng)
    images = rng.random((2, config.channels, config.image_size, config.image_size))
    labels = rng.integers(0, config.num_classes, size=2)

    def fn(p):
        return T.cross_entropy(model_forward(images, p, config), labels)

    return Case(f"model_{config.model_kind}", fn, params, MODEL_THRESHOLD)


def run_cases(cases, eps: float = 1e-5) -> list:
    return [(c.name, c.run(eps), c.threshold) for c in cases]
