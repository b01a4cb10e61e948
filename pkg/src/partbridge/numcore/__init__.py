"""Tensor math, reverse-mode autodiff and Adam for the whole pipeline."""

from .adam import Adam, AdamState, adam_step
from .checkpoint import CheckpointError, checkpoint_meta, load_checkpoint, save_checkpoint
from .nn import MLP, Conv3x3, Linear, Module, gaussian5_kernel
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    add,
    avg_pool2x,
    concat,
    conv2d,
    exp,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    narrow,
    pad2d,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sqrt,
    square,
    sub,
    sum_,
    tanh,
    upsample2x,
)

__all__ = [
    "Adam", "AdamState", "adam_step",
    "CheckpointError", "checkpoint_meta", "load_checkpoint", "save_checkpoint",
    "MLP", "Conv3x3", "Linear", "Module", "gaussian5_kernel",
    "NonFiniteError", "ShapeError", "Tape", "Tensor",
    "add", "avg_pool2x", "concat", "conv2d", "exp", "leaky_relu", "log",
    "matmul", "mean", "mul", "narrow", "pad2d", "reshape", "sigmoid",
    "softmax", "softmax_cross_entropy", "sqrt", "square", "sub", "sum_",
    "tanh", "upsample2x",
]
