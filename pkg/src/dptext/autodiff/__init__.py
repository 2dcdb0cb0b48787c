from . import ops
from .nn import (BatchNorm1d, CircularConv1d, Conv2d, LayerNorm, Linear, MLP, Module,
                 MultiheadAttention, Parameter, multi_head_attention)
from .optim import AdamW, AdamWState, NonFiniteGradientError, adamw_step, clip_grad_norm
from .tensor import ConfigError, GradTape, ShapeError, Tensor, as_tensor, no_grad

__all__ = [
    "ops", "Tensor", "GradTape", "ShapeError", "ConfigError", "as_tensor", "no_grad",
    "Module", "Parameter", "Linear", "LayerNorm", "BatchNorm1d", "MLP", "CircularConv1d",
    "Conv2d", "MultiheadAttention", "multi_head_attention",
    "AdamW", "AdamWState", "adamw_step", "clip_grad_norm", "NonFiniteGradientError",
]
