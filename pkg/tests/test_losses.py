import math

import numpy as np
import pytest

from fedepth.errors import UsageError
from fedepth.nn import autograd as ag
from fedepth.nn.losses import cross_entropy, kl_logits

from gradcheck import check_scalar


def test_cross_entropy_confident_correct():
    # -log(softmax([10, -10])[0]) = log(1 + e^-20) ~ 2.061e-9
    loss = cross_entropy(ag.Tensor(np.array([[10.0, -10.0]])), np.array([0]))
    assert loss.item() == pytest.approx(math.log1p(math.exp(-20)), rel=1e-9)
    assert loss.item() == pytest.approx(2.061e-9, rel=1e-3)


def test_cross_entropy_uniform_logits():
    loss = cross_entropy(ag.Tensor(np.zeros((1, 4))), np.array([2]))
    assert loss.item() == pytest.approx(math.log(4), rel=1e-12)


def test_cross_entropy_two_way_symmetry():
    loss = cross_entropy(ag.Tensor(np.array([[1.0, 1.0]])), np.array([0]))
    assert loss.item() == pytest.approx(math.log(2), rel=1e-12)


def test_cross_entropy_nonnegative_and_mean_reduction(rng):
    logits = rng.standard_normal((16, 5))
    labels = rng.integers(0, 5, 16)
    loss = cross_entropy(ag.Tensor(logits), labels).item()
    assert loss >= 0
    per = [
        cross_entropy(ag.Tensor(logits[i : i + 1]), labels[i : i + 1]).item()
        for i in range(16)
    ]
    assert loss == pytest.approx(np.mean(per), rel=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(UsageError):
        cross_entropy(ag.Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_kl_identity_is_zero(rng):
    h = rng.standard_normal((8, 4))
    assert kl_logits(ag.Tensor(h), ag.Tensor(h.copy())).item() == pytest.approx(0.0, abs=1e-15)


def test_kl_hand_evaluated_two_class_example():
    # softmax([ln 2, 0]) = [2/3, 1/3]; softmax([0, ln 2]) = [1/3, 2/3]
    # KL = 2/3 ln 2 + 1/3 ln(1/2) = (1/3) ln 2
    hp = np.array([[math.log(2), 0.0]])
    h = np.array([[0.0, math.log(2)]])
    got = kl_logits(ag.Tensor(hp), ag.Tensor(h)).item()
    assert got == pytest.approx(math.log(2) / 3, rel=1e-12)


def test_kl_mean_over_samples():
    hp = np.array([[math.log(2), 0.0], [1.0, -1.0]])
    h = np.array([[0.0, math.log(2)], [1.0, -1.0]])
    # one differing pair, one identical pair -> half the single-sample value
    got = kl_logits(ag.Tensor(hp), ag.Tensor(h)).item()
    assert got == pytest.approx(math.log(2) / 6, rel=1e-12)


def test_kl_nonnegative_random(rng):
    for _ in range(20):
        hp = rng.standard_normal((4, 6))
        h = rng.standard_normal((4, 6))
        assert kl_logits(ag.Tensor(hp), ag.Tensor(h)).item() >= 0


def test_kl_shape_mismatch():
    with pytest.raises(UsageError):
        kl_logits(ag.Tensor(np.zeros((2, 3))), ag.Tensor(np.zeros((2, 4))))


def test_loss_gradients_match_finite_differences(rng):
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, 5)
    err = check_scalar(lambda ts: cross_entropy(ts[0], labels), [logits])
    assert err < 1e-6

    hp = rng.standard_normal((5, 4))
    h = rng.standard_normal((5, 4))
    err = check_scalar(lambda ts: kl_logits(ts[0], ts[1]), [hp, h])
    assert err < 1e-6
