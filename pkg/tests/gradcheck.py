"""Central finite-difference gradient oracle.

The numeric side evaluates the layer through the gradient-free array path;
analytic gradients come from the tape. Perturbation 1e-5 in float64.
"""

import numpy as np

from fedepth.nn import autograd as ag
from fedepth.nn import fastops
from fedepth.nn.network import layer_forward


def finite_diff(loss_fn, arrays, h=1e-5):
    """Central-difference gradients of loss_fn w.r.t. each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / denom)


def check_layer(spec, x, params, block_input, rng, h=1e-5):
    """Max relative error between tape gradients and finite differences for
    one layer instance; checks the input, the block input (if any) and all
    parameters."""
    proj = rng.standard_normal(
        layer_forward(spec, params, x, block_input, fastops).shape
    )

    def loss_fn():
        return float(np.sum(layer_forward(spec, params, x, block_input, fastops) * proj))

    arrays = [x] + ([block_input] if block_input is not None else []) + [
        params[k] for k in sorted(params)
    ]
    fd = finite_diff(loss_fn, arrays, h)

    tx = ag.Tensor(x, requires_grad=True)
    tbi = ag.Tensor(block_input, requires_grad=True) if block_input is not None else None
    tparams = {k: ag.Tensor(v, requires_grad=True) for k, v in params.items()}
    out = layer_forward(spec, tparams, tx, tbi, ag)
    loss = ag.tsum(ag.mul(out, proj))
    loss.backward()

    analytic = [tx.grad] + ([tbi.grad] if tbi is not None else []) + [
        tparams[k].grad for k in sorted(tparams)
    ]
    return max(rel_error(a, f) for a, f in zip(analytic, fd))


def check_scalar(loss_builder, arrays, h=1e-5):
    """Gradient check for a scalar-valued tape expression.

    loss_builder(tensors) must build the loss from the given Tensors; the
    numeric oracle re-evaluates it on perturbed raw arrays.
    """

    def loss_fn():
        tensors = [ag.Tensor(a) for a in arrays]
        return loss_builder(tensors).item()

    fd = finite_diff(loss_fn, arrays, h)
    tensors = [ag.Tensor(a, requires_grad=True) for a in arrays]
    loss = loss_builder(tensors)
    loss.backward()
    return max(rel_error(t.grad, f) for t, f in zip(tensors, fd))
