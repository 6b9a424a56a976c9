"""SGD with optional momentum and a cosine learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError


def cosine_lr(base_lr, step, total_steps):
    return base_lr * (1.0 + np.cos(np.pi * step / total_steps)) / 2.0


@dataclass
class OptimizerState:
    base_lr: float
    momentum: float = 0.0
    step: int = 0
    total_steps: int = 1
    cosine: bool = False
    velocity: dict = field(default_factory=dict)

    def lr(self):
        if self.cosine:
            return float(cosine_lr(self.base_lr, self.step, self.total_steps))
        return float(self.base_lr)


def sgd_step(state, params):
    """One update: w <- w - lr(t) * (momentum-adjusted grad), in place.

    params maps names to Tensors whose .grad was filled by backward().
    """
    lr = state.lr()
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
        if state.momentum:
            v = state.velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = state.momentum * v + g
            state.velocity[name] = v
            update = v
        else:
            update = g
        p.data -= (lr * update).astype(p.data.dtype, copy=False)
    state.step += 1
    return state
