"""CAT classifier and the quadratic-attention ViT baseline.

Parameters live in a flat ordered dict keyed by checkpoint name
(``embed.kernel``, ``layer0.attn.qkv.weight``, ...).  The forward pass takes
either raw arrays or tape-tracked tensors under those names.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import (
    GAMMA_MODES,
    POS_MODES,
    AttentionConfig,
    AttentionParams,
    cross_axis_attention,
    softmax_attention,
)
from .errors import BadImageSize, ConfigError
from .rope import GridSpec, RotaryTables, build_tables
from .tensor import Tensor

IMPRINT_MODES = ("off", "constant", "forward_decay", "backward_decay", "tanh_forward", "tanh_backward")
MODEL_KINDS = ("cat", "vit_baseline")
INIT_STD = 0.02


@dataclass
class CatConfig:
    image_size: int = 32
    patch_size: int = 8
    hidden: int = 64
    heads: int = 4
    layers: int = 3
    ffn_ratio: float = 4
    num_classes: int = 10
    channels: int = 3
    imprint_mode: str = "constant"
    imprint_layers: Optional[list] = None  # per-layer flags; None means every layer
    model_kind: str = "cat"
    pos_mode: str = "rotary"  # baseline only; CAT always uses rotary
    gamma_mode: str = "retnet"
    eps: float = 1e-5

    def __post_init__(self):
        if self.patch_size < 1 or self.image_size % self.patch_size:
            raise BadImageSize(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.head_dim % 4:
            raise ConfigError(f"head_dim {self.head_dim} must be a multiple of 4")
        if self.imprint_mode not in IMPRINT_MODES:
            raise ConfigError(f"imprint_mode must be one of {IMPRINT_MODES}")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}")
        if self.pos_mode not in POS_MODES:
            raise ConfigError(f"pos_mode must be one of {POS_MODES}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ConfigError(f"gamma_mode must be one of {GAMMA_MODES}")
        if self.imprint_layers is not None:
            self.imprint_layers = [bool(b) for b in self.imprint_layers]
            if len(self.imprint_layers) != self.layers:
                raise ConfigError(f"imprint_layers needs {self.layers} flags")
        if self.ffn_hidden < 1:
            raise ConfigError("ffn_ratio too small")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid**2

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def ffn_hidden(self) -> int:
        return int(round(self.ffn_ratio * self.hidden))

    @property
    def uses_rotary(self) -> bool:
        return self.model_kind == "cat" or self.pos_mode == "rotary"

    def imprint_mask(self) -> list:
        return list(self.imprint_layers) if self.imprint_layers is not None else [True] * self.layers

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(self.hidden, self.heads, self.grid, self.gamma_mode, True, self.eps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in fields(cls)}


# --------------------------------------------------------------------------
# parameters


def param_shapes(config: CatConfig) -> dict:
    d, r, c = config.hidden, config.ffn_hidden, config.num_classes
    shapes = {
        "embed.kernel": (config.channels * config.patch_size**2, d),
        "embed.bias": (d,),
        "class_token": (d,),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        shapes[p + "in_norm.scale"] = (d,)
        shapes[p + "in_norm.shift"] = (d,)
        shapes[p + "attn.qkv.weight"] = (d, 3 * d)
        shapes[p + "attn.qkv.bias"] = (3 * d,)
        if config.model_kind == "cat":
            shapes[p + "attn.gn.scale"] = (config.heads,)
            shapes[p + "attn.gn.shift"] = (config.heads,)
        shapes[p + "attn.out.weight"] = (d, d)
        shapes[p + "attn.out.bias"] = (d,)
        shapes[p + "out_norm.scale"] = (d,)
        shapes[p + "out_norm.shift"] = (d,)
        shapes[p + "ffn.w1"] = (d, r)
        shapes[p + "ffn.b1"] = (r,)
        shapes[p + "ffn.w2"] = (r, d)
        shapes[p + "ffn.b2"] = (d,)
    shapes["head.weight"] = (d, c)
    shapes["head.bias"] = (c,)
    return shapes


def param_count(config: CatConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


def _truncated_normal(rng: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(config: CatConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Weights ~ N(0, 0.02) truncated at 2 std; biases and shifts 0; norm scales 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "scale":
            arr = np.ones(shape)
        elif leaf in ("shift", "bias", "b1", "b2"):
            arr = np.zeros(shape)
        else:
            arr = _truncated_normal(rng, shape, INIT_STD)
        params[name] = arr.astype(dtype)
    return params


def _as_tensors(params: dict) -> dict:
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def attention_params(params: dict, layer: int) -> AttentionParams:
    p = f"layer{layer}.attn."
    return AttentionParams(
        params[p + "qkv.weight"],
        params[p + "qkv.bias"],
        params[p + "out.weight"],
        params[p + "out.bias"],
        params.get(p + "gn.scale"),
        params.get(p + "gn.shift"),
    )


# --------------------------------------------------------------------------
# forward pieces


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """[..., C, H, W] -> [..., S, S, C*p*p] with (channel, ky, kx) ordering."""
    *lead, c, h, w = images.shape
    if h != w or h % patch:
        raise BadImageSize(f"image {h}x{w} is not square or not divisible by patch {patch}")
    s = h // patch
    x = images.reshape(*lead, c, s, patch, s, patch)
    n = len(lead)
    x = x.transpose(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return np.ascontiguousarray(x.reshape(*lead, s, s, c * patch * patch))


def patch_embed(images, kernel: Tensor, bias: Tensor, patch: int) -> Tensor:
    """Stride-p, kernel-p convolution written as a per-patch affine map."""
    images = images.data if isinstance(images, Tensor) else np.asarray(images)
    if images.shape[-3] * patch * patch != kernel.shape[0]:
        raise BadImageSize(f"{images.shape[-3]} channels with patch {patch} do not fit kernel {kernel.shape}")
    patches = Tensor(patchify(images, patch), dtype=kernel.dtype)
    return T.linear(patches, kernel, bias)


def imprint_schedule(layer: int, layers: int, mode: str) -> float:
    if not 0 <= layer < layers:
        raise ValueError(f"layer {layer} outside [0, {layers})")
    # single divisions so each value is the correctly rounded fraction
    frac = layer / layers
    rest = (layers - layer) / layers
    if mode == "off":
        return 0.0
    if mode == "constant":
        return 1.0
    if mode == "forward_decay":
        return rest
    if mode == "backward_decay":
        return frac
    if mode == "tanh_forward":
        return math.tanh(rest)
    if mode == "tanh_backward":
        return math.tanh(frac)
    raise ValueError(f"unknown imprint mode {mode!r}")


def sinusoidal_embedding(tokens: int, hidden: int) -> np.ndarray:
    pos = np.arange(tokens)[:, None]
    i = np.arange(0, hidden, 2)[None, :]
    angle = pos / 10000.0 ** (i / hidden)
    pe = np.zeros((tokens, hidden))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


@functools.lru_cache(maxsize=32)
def rotary_tables(grid: int, head_dim: int) -> RotaryTables:
    return build_tables(GridSpec(grid, grid, head_dim))


def feed_forward(x: Tensor, params: dict, prefix: str) -> Tensor:
    h = T.gelu(T.linear(x, params[prefix + "w1"], params[prefix + "b1"]))
    return T.linear(h, params[prefix + "w2"], params[prefix + "b2"])


def cat_block(
    x: Tensor,
    params: dict,
    layer: int,
    config: CatConfig,
    tables: Optional[RotaryTables] = None,
    imprint: Optional[Tensor] = None,
) -> Tensor:
    """Pre-norm attention and FFN residuals for one layer of either model kind."""
    p = f"layer{layer}."
    if tables is None and config.uses_rotary:
        tables = rotary_tables(config.grid, config.head_dim)
    h = T.layer_norm(x, params[p + "in_norm.scale"], params[p + "in_norm.shift"], config.eps)
    attn = attention_params(params, layer)
    if config.model_kind == "cat":
        a = cross_axis_attention(h, attn, config.attention_config(), tables, imprint)
    else:
        if imprint is not None:
            h = T.add(h, imprint)
        s, d = config.grid, config.hidden
        lead = h.shape[:-3]
        flat = T.reshape(h, lead + (s * s, d))
        a = softmax_attention(flat, attn, config.heads, config.pos_mode, tables)
        a = T.reshape(a, lead + (s, s, d))
    x = T.add(a, x)
    h = T.layer_norm(x, params[p + "out_norm.scale"], params[p + "out_norm.shift"], config.eps)
    return T.add(feed_forward(h, params, p + "ffn."), x)


def model_forward(images, params: dict, config: CatConfig) -> Tensor:
    """Logits [..., C] for images [..., C_in, H, W]."""
    params = _as_tensors(params)
    images = images.data if isinstance(images, Tensor) else np.asarray(images)
    if images.shape[-1] != config.image_size or images.shape[-2] != config.image_size:
        raise BadImageSize(f"expected {config.image_size}px images, got {images.shape[-2:]}")
    e = patch_embed(images, params["embed.kernel"], params["embed.bias"], config.patch_size)
    if config.model_kind == "vit_baseline" and config.pos_mode == "sinusoidal":
        pe = sinusoidal_embedding(config.tokens, config.hidden).reshape(config.grid, config.grid, config.hidden)
        e = T.add(e, Tensor(pe, dtype=e.dtype))
    tables = rotary_tables(config.grid, config.head_dim) if config.uses_rotary else None

    # the imprint is computed once and carried to every flagged layer
    base = None
    if config.imprint_mode != "off":
        base = T.add(e, params["class_token"])
    mask = config.imprint_mask()
    x = e
    for layer in range(config.layers):
        imprint = None
        if base is not None and mask[layer]:
            imprint = T.scale(base, imprint_schedule(layer, config.layers, config.imprint_mode))
        x = cat_block(x, params, layer, config, tables, imprint)
    pooled = T.mean(x, axis=(-3, -2))
    return T.linear(pooled, params["head.weight"], params["head.bias"])


def predict(images, params: dict, config: CatConfig, batch_size: int = 256) -> np.ndarray:
    """Untracked logits for a stack of images, evaluated in batches."""
    out = []
    for i in range(0, len(images), batch_size):
        out.append(model_forward(images[i:i + batch_size], params, config).data)
    return np.concatenate(out, axis=0)
