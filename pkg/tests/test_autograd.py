import numpy as np
import pytest

from fedepth.errors import UsageError
from fedepth.nn import autograd as ag

from gradcheck import check_scalar


def test_scalar_chain_rule():
    # loss = 0.5 * x^2 at x = 3 -> dL/dx = 3
    x = ag.Tensor(np.array(3.0), requires_grad=True)
    loss = ag.mul(ag.mul(x, x), 0.5)
    loss.backward()
    assert loss.item() == 4.5
    assert x.grad == pytest.approx(3.0)


def test_dense_weight_grad_hand_derived():
    # y = W x, L = sum(y), W all ones 2x2, x = [1, 2] -> dL/dW = [[1, 2], [1, 2]]
    # (hand chain rule: dL/dW_ij = x_j)
    w = ag.Tensor(np.ones((2, 2)), requires_grad=True)
    x = ag.Tensor(np.array([[1.0], [2.0]]))
    y = ag.matmul(w, x)
    loss = ag.tsum(y)
    loss.backward()
    np.testing.assert_allclose(w.grad, [[1.0, 2.0], [1.0, 2.0]])


def test_backward_without_recorded_forward_raises():
    leaf = ag.Tensor(np.array(1.0), requires_grad=True)
    with pytest.raises(UsageError):
        leaf.backward()


def test_backward_requires_scalar_root():
    x = ag.Tensor(np.ones(3), requires_grad=True)
    y = ag.mul(x, 2.0)
    with pytest.raises(UsageError):
        y.backward()


def test_frozen_parents_receive_no_gradient():
    frozen = ag.Tensor(np.ones((2, 2)))
    live = ag.Tensor(np.ones((2, 2)), requires_grad=True)
    out = ag.tsum(ag.matmul(frozen, live))
    out.backward()
    assert frozen.grad is None
    assert live.grad is not None


def test_grad_accumulates_across_shared_use(rng):
    x = ag.Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    out = ag.tsum(ag.add(x, x))
    out.backward()
    np.testing.assert_allclose(x.grad, np.full((3, 3), 2.0))


def test_detach_cuts_the_tape(rng):
    x = ag.Tensor(rng.standard_normal(4), requires_grad=True)
    y = ag.mul(x, 3.0)
    loss = ag.tsum(ag.mul(ag.detach(y), y))
    loss.backward()
    # only the live branch contributes: d/dx sum(c * 3x) with c = 3x fixed
    np.testing.assert_allclose(x.grad, 3.0 * y.data)


def test_visit_counter_counts_leaf_accumulations(rng):
    w = ag.Tensor(rng.standard_normal((3, 2)), requires_grad=True, name="w")
    x = ag.Tensor(rng.standard_normal((4, 3)))
    counter = {}
    ag.visit_counter = counter
    try:
        for _ in range(5):
            loss = ag.tsum(ag.matmul(x, w))
            loss.backward()
    finally:
        ag.visit_counter = None
    assert counter == {"w": 5}


@pytest.mark.parametrize(
    "builder",
    [
        lambda ts: ag.tsum(ag.relu(ts[0])),
        lambda ts: ag.tsum(ag.exp(ts[0])),
        lambda ts: ag.tsum(ag.logsumexp(ts[0])),
        lambda ts: ag.mean_all(ag.mul(ts[0], ts[0])),
        lambda ts: ag.tsum(ag.reshape(ts[0], (-1,))),
    ],
    ids=["relu", "exp", "logsumexp", "mean_square", "reshape"],
)
def test_primitive_gradients_match_finite_differences(builder, rng):
    x = rng.standard_normal((4, 5)) + 0.1  # keep relu away from its kink
    assert check_scalar(builder, [x]) < 1e-6


def test_matmul_gradients_match_finite_differences(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    err = check_scalar(lambda ts: ag.tsum(ag.matmul(ts[0], ts[1])), [a, b])
    assert err < 1e-6


def test_take_rows_gradient(rng):
    x = rng.standard_normal((5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    err = check_scalar(lambda ts: ag.tsum(ag.take_rows(ts[0], labels)), [x])
    assert err < 1e-6
