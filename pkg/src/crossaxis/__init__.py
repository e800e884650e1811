"""Cross-axis transformer: linear-cost axial attention, rotary axial embeddings, residual imprint."""

from .attention import AttentionConfig, cross_axis_attention, cross_axis_contract, softmax_attention
from .model import CatConfig, init_params, model_forward, param_count
from .tensor import Tape, Tensor, backward, grad_check

__all__ = [
    "AttentionConfig",
    "CatConfig",
    "Tape",
    "Tensor",
    "backward",
    "cross_axis_attention",
    "cross_axis_contract",
    "grad_check",
    "init_params",
    "model_forward",
    "param_count",
    "softmax_attention",
]
