"""Minimal differentiable compute core: tensors, fused primitives, layers, Adam."""
from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients
from .nn import (
    Conv2d,
    CausalConv1d,
    DepthwiseConv1d,
    FreqDeconv2d,
    GroupGRU,
    InstanceNorm,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    SpectralNorm,
    activation,
)
from .optim import Adam, clip_grad_norm
from .tensor import Tensor, as_tensor, concat, gelu, leaky_relu, no_grad, stack

__all__ = [
    "Adam",
    "CausalConv1d",
    "Conv2d",
    "DepthwiseConv1d",
    "FreqDeconv2d",
    "GroupGRU",
    "InstanceNorm",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "SpectralNorm",
    "Tensor",
    "activation",
    "as_tensor",
    "check_gradients",
    "clip_grad_norm",
    "concat",
    "functional",
    "gelu",
    "leaky_relu",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
    "stack",
]
