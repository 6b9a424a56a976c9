"""Gradient-free op namespace mirroring fedepth.nn.autograd.

Same function names and arithmetic (both call into kernels), but on plain
ndarrays with no tape. Used for frozen forward passes and inference.
"""

import numpy as np

from . import kernels


def add(a, b):
    return a + b


def relu(x):
    return kernels.relu(x)


def dense(x, w, b):
    return kernels.dense(x, w, b)


def conv2d(x, w, b, stride=1, padding=1):
    out, _ = kernels.conv2d(x, w, b, stride, padding, need_cols=False)
    return out


def groupnorm(x, gain, bias, groups, eps=1e-5):
    out, _ = kernels.groupnorm(x, gain, bias, groups, eps)
    return out


def avg_pool(x, kh, kw):
    return kernels.avg_pool(x, kh, kw)


def flatten(x):
    return x.reshape(x.shape[0], -1)


def adapt(x, target):
    return kernels.adapt(x, target)


def logsumexp(x):
    return kernels.logsumexp(x)


def softmax(x):
    return kernels.softmax(x)


def argmax_rows(logits):
    """Row argmax; ties resolve to the lowest index."""
    return np.argmax(logits, axis=-1)
