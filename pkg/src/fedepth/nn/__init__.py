"""Minimal block-structured neural-network engine."""

from . import autograd, fastops, kernels
from .autograd import Tensor, backward
from .checkpoint import load_weights, read_tensor_file, save_weights, write_tensor_file
from .graph import (
    BlockGraph,
    LayerSpec,
    avg_pool,
    classifier_head,
    conv2d,
    dense,
    flatten,
    groupnorm,
    relu,
    residual_add,
    width_scale,
    zero_pad_adapter,
)
from .losses import cross_entropy, kl_logits
from .network import Activation, ModelWeights, forward, init_weights, weight_shapes
from .optim import OptimizerState, cosine_lr, sgd_step

__all__ = [
    "Activation",
    "BlockGraph",
    "LayerSpec",
    "ModelWeights",
    "OptimizerState",
    "Tensor",
    "autograd",
    "avg_pool",
    "backward",
    "classifier_head",
    "conv2d",
    "cosine_lr",
    "cross_entropy",
    "dense",
    "fastops",
    "flatten",
    "forward",
    "groupnorm",
    "init_weights",
    "kernels",
    "kl_logits",
    "load_weights",
    "read_tensor_file",
    "relu",
    "residual_add",
    "save_weights",
    "sgd_step",
    "weight_shapes",
    "width_scale",
    "write_tensor_file",
    "zero_pad_adapter",
]
