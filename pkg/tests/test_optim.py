import math

import numpy as np
import pytest

from ugcn.autodiff import Tensor
from ugcn.optim import Adam, AdamState, adam_step


def test_zero_gradient_leaves_parameters_unchanged():
    p = np.array([[1.0, -2.0]])
    adam_step([p], [np.zeros_like(p)], AdamState(lr=0.1))
    assert p.tolist() == [[1.0, -2.0]]


def test_first_step_moves_by_lr_against_the_gradient_sign():
    p = np.zeros((1, 3))
    adam_step([p], [np.array([[0.3, -7.0, 1e-3]])], AdamState(lr=0.01))
    np.testing.assert_allclose(p, [[-0.01, 0.01, -0.01]], rtol=1e-4)


def test_two_step_trace_matches_hand_computation():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = np.array([[1.0]])
    state = AdamState(lr=lr)
    expected, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate([0.5, -1.0], start=1):
        adam_step([p], [np.array([[g]])], state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        expected -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    assert p.item() == pytest.approx(expected, abs=1e-15)
    assert p.item() == pytest.approx(0.93661, abs=1e-5)
    assert state.step_count == 2


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        adam_step([np.zeros((2, 2))], [np.zeros((2, 3))], AdamState())


def test_adam_wrapper_uses_tensor_grads():
    w = Tensor(np.ones((1, 2)), requires_grad=True)
    opt = Adam([w], lr=0.5)
    w.grad[:] = [[1.0, -1.0]]
    opt.step()
    np.testing.assert_allclose(w.values, [[0.5, 1.5]], rtol=1e-6)
    opt.zero_grad()
    assert not w.grad.any()
