"""Minimal autodiff toolkit: tensors, layers, optimizer, gradient checking."""

from . import tensor
from .blocks import (
    LEAK,
    Conv2d,
    DemodConv,
    Dense,
    GatingNetwork,
    ResidualBlock,
    SelfAttention,
    SFTModulate,
    SPConv,
    gated_fuse,
    make_coordinate_map,
)
from .gradcheck import check_gradients, max_rel_error, numeric_grad, projection_loss
from .module import Module, param, zeros_param
from .optim import Adam
from .tensor import (
    Tensor,
    absval,
    as_tensor,
    clip,
    concat,
    constant,
    conv2d,
    crop,
    exp,
    leaky_relu,
    log,
    matmul,
    maximum,
    minimum,
    no_grad,
    pad_reflect,
    pad_zero,
    place,
    sigmoid,
    softmax,
    sqrt,
    tanh,
    upsample2x,
)

__all__ = [
    "Adam",
    "Conv2d",
    "DemodConv",
    "Dense",
    "GatingNetwork",
    "LEAK",
    "Module",
    "ResidualBlock",
    "SFTModulate",
    "SPConv",
    "SelfAttention",
    "Tensor",
    "absval",
    "as_tensor",
    "check_gradients",
    "clip",
    "concat",
    "constant",
    "conv2d",
    "crop",
    "exp",
    "gated_fuse",
    "leaky_relu",
    "log",
    "make_coordinate_map",
    "matmul",
    "max_rel_error",
    "maximum",
    "minimum",
    "no_grad",
    "numeric_grad",
    "pad_reflect",
    "pad_zero",
    "param",
    "place",
    "projection_loss",
    "sigmoid",
    "softmax",
    "sqrt",
    "tanh",
    "tensor",
    "upsample2x",
    "zeros_param",
]
