"""Analytic FLOP and parameter accounting.

Counts are kept in multiply-accumulates (MACs); the ``flops`` convention is
exactly twice that.  Affine layers count one MAC per weight per token plus one
op per bias element per token, so a model built only from affine layers has
FLOPs-per-parameter equal to its token count.  Norms and activations cost
NORM_OPS per element, softmax costs SOFTMAX_OPS per attention entry, and
other elementwise work (residual adds, rotary, gamma, imprint) one to three
ops per element.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewSizes
from .model import CatConfig, param_count

CONVENTIONS = ("macs", "flops")
NORM_OPS = 5
SOFTMAX_OPS = 5  # exp, subtract, share of the row max, share of the row sum, divide
ROTARY_OPS = 3  # two multiplies and an add per channel
COMPONENTS = (
    "embed",
    "attn_stage1",
    "attn_stage2",
    "projections",
    "ffn",
    "norms",
    "softmax",
    "elementwise",
    "head",
)


def _factor(convention: str) -> int:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    return 1 if convention == "macs" else 2


def flops_cross_axis_attention(S: int, d: int, convention: str = "macs") -> dict:
    """Per-layer cost of the two batched products plus the projection matmuls."""
    if S < 1:
        raise ValueError("S must be >= 1")
    f = _factor(convention)
    stage = S * S * S * d
    n = S * S
    return {
        "stage1": f * stage,
        "stage2": f * stage,
        "contraction": f * 2 * stage,
        "qkv_projection": f * 3 * n * d * d,
        "output_projection": f * n * d * d,
    }


def flops_quadratic_attention(N: int, d: int, convention: str = "macs", heads: int = 1) -> dict:
    if N < 1:
        raise ValueError("N must be >= 1")
    f = _factor(convention)
    return {
        "qk": f * N * N * d,
        "av": f * N * N * d,
        "matmul": f * 2 * N * N * d,
        "softmax": f * SOFTMAX_OPS * heads * N * N,
        "qkv_projection": f * 3 * N * d * d,
        "output_projection": f * N * d * d,
    }


@dataclass
class FlopReport:
    components: dict  # name -> count in the report's convention
    param_count: int
    convention: str = "macs"
    label: str = ""
    total: int = field(init=False)
    fpp: float = field(init=False)

    def __post_init__(self):
        self.total = sum(self.components.values())
        self.fpp = self.total / self.param_count

    def convert(self, convention: str) -> "FlopReport":
        scale = _factor(convention) / _factor(self.convention)
        comps = {k: int(v * scale) for k, v in self.components.items()}
        return FlopReport(comps, self.param_count, convention, self.label)

    def table(self) -> str:
        macs, flops = self.convert("macs"), self.convert("flops")
        lines = [f"{self.label or 'model'}  (params {self.param_count:,})"]
        lines.append(f"  {'component':<12} {'flops':>18} {'macs':>18}")
        for name in self.components:
            lines.append(f"  {name:<12} {flops.components[name]:>18,} {macs.components[name]:>18,}")
        lines.append(f"  {'total':<12} {flops.total:>18,} {macs.total:>18,}")
        lines.append(f"  {'fpp':<12} {flops.fpp:>18.2f} {macs.fpp:>18.2f}")
        return "\n".join(lines)

    def csv(self) -> str:
        macs, flops = self.convert("macs"), self.convert("flops")
        buf = io.StringIO()
        buf.write("component,flops,macs\n")
        for name in self.components:
            buf.write(f"{name},{flops.components[name]},{macs.components[name]}\n")
        buf.write(f"total,{flops.total},{macs.total}\n")
        return buf.getvalue()


def flops_model(config: CatConfig, convention: str = "macs") -> FlopReport:
    """Per-image forward cost of the whole classifier."""
    f = _factor(convention)
    S, d, L, H = config.grid, config.hidden, config.layers, config.heads
    N = S * S
    r = config.ffn_hidden
    cat = config.model_kind == "cat"
    patch_in = config.channels * config.patch_size**2
    imprinted = sum(config.imprint_mask()) if config.imprint_mode != "off" else 0

    if cat:
        att = flops_cross_axis_attention(S, d)
        stage1, stage2 = att["stage1"], att["stage2"]
    else:
        att = flops_quadratic_attention(N, d, heads=H)
        stage1, stage2 = att["qk"], att["av"]
    proj = att["qkv_projection"] + att["output_projection"] + N * 4 * d

    per_elem = 2 * N * d  # two residual adds
    if config.uses_rotary:
        per_elem += 2 * ROTARY_OPS * N * d
    if cat:
        per_elem += N * d  # gamma scaling of keys
    else:
        per_elem += H * N * N  # 1/sqrt(dh) score scaling

    comps = {
        "embed": N * (patch_in * d + d),
        "attn_stage1": L * stage1,
        "attn_stage2": L * stage2,
        "projections": L * proj,
        "ffn": L * N * (2 * d * r + r + d),
        "norms": L * NORM_OPS * N * (2 * d + (d if cat else 0) + r),
        "softmax": 0 if cat else L * att["softmax"],
        "elementwise": L * per_elem + imprinted * N * d + (N * d if imprinted else 0)
        + (N * d if not cat and config.pos_mode == "sinusoidal" else 0),
        "head": N * d + d * config.num_classes + config.num_classes,
    }
    comps = {k: f * v for k, v in comps.items()}
    label = f"{config.model_kind} S={S} d={d} L={L} r={config.ffn_ratio:g}"
    return FlopReport(comps, param_count(config), convention, label)


def large_preset(model_kind: str = "cat") -> CatConfig:
    """Large config: patch 8, 8 heads, 5 layers, hidden 1024, FFN ratio 1.

    The 224px image size is an assumption following the ImageNet convention.
    """
    return CatConfig(
        image_size=224,
        patch_size=8,
        hidden=1024,
        heads=8,
        layers=5,
        ffn_ratio=1,
        num_classes=1000,
        imprint_mode="constant" if model_kind == "cat" else "off",
        model_kind=model_kind,
        pos_mode="rotary",
    )


def contraction_macs(op: str, S: int, d: int) -> int:
    if op == "cross_axis":
        return flops_cross_axis_attention(S, d)["contraction"]
    if op == "quadratic":
        return flops_quadratic_attention(S * S, d)["matmul"]
    raise ValueError(f"unknown op {op!r}")


def _slope(tokens, values) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(tokens, dtype=float)), np.log(np.asarray(values, dtype=float)), 1)
    return float(slope)


def fit_scaling_exponent(op: str, sizes, d: int) -> float:
    """Least-squares slope of log(contraction MACs) against log(N = S^2)."""
    sizes = list(sizes)
    if len(sizes) < 3:
        raise TooFewSizes(f"need at least 3 sizes, got {len(sizes)}")
    return _slope([s * s for s in sizes], [contraction_macs(op, s, d) for s in sizes])


def time_contraction(op: str, S: int, d: int, heads: int = 1, repeats: int = 3, seed: int = 0) -> float:
    """Best-of-n wall-clock seconds for the bare contraction at grid S."""
    from .attention import cross_axis_contract
    from .tensor import Tensor, matmul, softmax, transpose

    rng = np.random.default_rng(seed)
    dh = d // heads
    if op == "cross_axis":
        q, k, v = (Tensor(rng.standard_normal((S, S, heads, dh)).astype(np.float32)) for _ in range(3))

        def run():
            cross_axis_contract(q, k, v)
    else:
        q, k, v = (Tensor(rng.standard_normal((heads, S * S, dh)).astype(np.float32)) for _ in range(3))

        def run():
            matmul(softmax(matmul(q, transpose(k, -1, -2))), v)

    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        best = min(best, time.perf_counter() - t0)
    return best


def scaling_table(sizes, d: int, timed: bool = True, heads: int = 1) -> dict:
    """Analytic and (optionally) timed contraction costs with fitted exponents."""
    sizes = list(sizes)
    if len(sizes) < 3:
        raise TooFewSizes(f"need at least 3 sizes, got {len(sizes)}")
    rows = []
    for s in sizes:
        row = {
            "S": s,
            "N": s * s,
            "cross_axis_macs": contraction_macs("cross_axis", s, d),
            "quadratic_macs": contraction_macs("quadratic", s, d),
        }
        if timed:
            row["cross_axis_sec"] = time_contraction("cross_axis", s, d, heads)
            row["quadratic_sec"] = time_contraction("quadratic", s, d, heads)
        rows.append(row)
    tokens = [r["N"] for r in rows]
    fit = {
        "cross_axis": fit_scaling_exponent("cross_axis", sizes, d),
        "quadratic": fit_scaling_exponent("quadratic", sizes, d),
    }
    if timed:
        fit["cross_axis_timed"] = _slope(tokens, [r["cross_axis_sec"] for r in rows])
        fit["quadratic_timed"] = _slope(tokens, [r["quadratic_sec"] for r in rows])
    return {"rows": rows, "exponents": fit}
