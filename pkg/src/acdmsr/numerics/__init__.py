from .checkpoint import CheckpointError, load_tensors, save_tensors
from .ops import (
    abs_,
    add,
    add_channel_bias,
    concat_channels,
    conv2d,
    group_norm,
    l1,
    linear,
    mean,
    mse,
    mul,
    scale,
    silu,
    sub,
    upsample2x,
)
from .optim import AdamState, adam_step
from .tensor import Graph, Node, NonFiniteError, ShapeError, Tensor, as_tensor, reverse_gradients

__all__ = [
    "AdamState",
    "CheckpointError",
    "Graph",
    "Node",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "abs_",
    "adam_step",
    "add",
    "add_channel_bias",
    "as_tensor",
    "concat_channels",
    "conv2d",
    "group_norm",
    "l1",
    "linear",
    "load_tensors",
    "mean",
    "mse",
    "mul",
    "reverse_gradients",
    "save_tensors",
    "scale",
    "silu",
    "sub",
    "upsample2x",
]
