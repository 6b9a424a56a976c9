import numpy as np
import pytest

from fedepth.errors import NumericError
from fedepth.nn import autograd as ag
from fedepth.nn.optim import OptimizerState, cosine_lr, sgd_step


def test_cosine_schedule_endpoints():
    state = OptimizerState(base_lr=0.1, total_steps=100, cosine=True)
    assert state.lr() == pytest.approx(0.1)
    state.step = 50
    assert state.lr() == pytest.approx(0.05)
    state.step = 100
    assert state.lr() == pytest.approx(0.0, abs=1e-17)


def test_cosine_lr_monotone_decreasing():
    vals = [cosine_lr(0.1, t, 50) for t in range(51)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(v >= 0 for v in vals)


def test_single_step_arithmetic():
    # w = 1.0, grad = 2.0, lr = 0.1, no momentum -> 0.8
    p = ag.Tensor(np.array([1.0]), requires_grad=True, name="w")
    p.grad = np.array([2.0])
    state = sgd_step(OptimizerState(base_lr=0.1), {"w": p})
    assert p.data[0] == pytest.approx(0.8)
    assert state.step == 1


def test_momentum_accumulates():
    p = ag.Tensor(np.array([0.0]), requires_grad=True, name="w")
    state = OptimizerState(base_lr=1.0, momentum=0.5)
    p.grad = np.array([1.0])
    sgd_step(state, {"w": p})  # v=1, w=-1
    p.grad = np.array([1.0])
    sgd_step(state, {"w": p})  # v=1.5, w=-2.5
    assert p.data[0] == pytest.approx(-2.5)


def test_nonfinite_gradient_rejected():
    p = ag.Tensor(np.array([1.0]), requires_grad=True, name="w")
    p.grad = np.array([np.nan])
    with pytest.raises(NumericError):
        sgd_step(OptimizerState(base_lr=0.1), {"w": p})


def test_step_determinism():
    def run():
        rng = np.random.default_rng(7)
        p = ag.Tensor(rng.standard_normal(8).astype(np.float32), requires_grad=True, name="w")
        state = OptimizerState(base_lr=0.05, momentum=0.9, total_steps=20, cosine=True)
        for _ in range(20):
            p.grad = (p.data * 0.3).astype(np.float32)
            sgd_step(state, {"w": p})
        return p.data.copy()

    a, b = run(), run()
    assert np.array_equal(a, b)
