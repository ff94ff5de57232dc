import math

import numpy as np
import pytest

from topicfuse.autograd import ShapeError, Tensor
from topicfuse.optim import AdamWState, adamw_step, warmup_lr


def _param(values):
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def test_zero_gradient_zero_decay_is_a_no_op():
    p = _param([[1.0, -2.0], [0.5, 3.0]])
    before = p.data.copy()
    adamw_step({"w": p}, {"w": np.zeros((2, 2))}, AdamWState(weight_decay=0.0))
    np.testing.assert_array_equal(p.data, before)


def test_zero_learning_rate_is_a_no_op():
    p = _param([[1.0, -2.0], [0.5, 3.0]])
    before = p.data.copy()
    state = AdamWState(learning_rate=0.0, weight_decay=0.3)
    adamw_step({"w": p}, {"w": np.ones((2, 2))}, state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step == 1


def _hand_step(theta, g, m, v, t, lr, b1, b2, eps, wd, decay):
    # scalar reference, written out term by term
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    if decay:
        theta = theta * (1 - lr * wd)
    theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta, m, v


def test_matches_hand_stepped_reference():
    cfg = dict(lr=0.01, b1=0.9, b2=0.999, eps=1e-8, wd=0.01)
    state = AdamWState(cfg["lr"], cfg["b1"], cfg["b2"], cfg["eps"], cfg["wd"])
    w = _param([[0.7]])
    b = _param([-0.3])
    ref = {"w": (0.7, 0.0, 0.0), "b": (-0.3, 0.0, 0.0)}
    for t, (gw, gb) in enumerate([(0.2, -1.5), (-0.4, 0.25), (1.1, 0.0)], start=1):
        adamw_step({"w": w, "b": b}, {"w": np.array([[gw]]), "b": np.array([gb])}, state)
        ref["w"] = _hand_step(*ref["w"][:1], gw, *ref["w"][1:], t, cfg["lr"], cfg["b1"],
                              cfg["b2"], cfg["eps"], cfg["wd"], decay=True)
        ref["b"] = _hand_step(*ref["b"][:1], gb, *ref["b"][1:], t, cfg["lr"], cfg["b1"],
                              cfg["b2"], cfg["eps"], cfg["wd"], decay=False)
        assert abs(w.data[0, 0] - ref["w"][0]) < 1e-10
        assert abs(b.data[0] - ref["b"][0]) < 1e-10
    assert state.step == 3


def test_moment_shapes_follow_parameters():
    p = _param(np.zeros((3, 2)))
    state = AdamWState()
    adamw_step({"p": p}, {"p": np.ones((3, 2))}, state)
    assert state.m["p"].shape == state.v["p"].shape == (3, 2)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adamw_step({"p": _param([1.0, 2.0])}, {"p": np.ones(3)}, AdamWState())


def test_warmup_schedule_is_exact():
    for s in range(1, 100):
        assert warmup_lr(s, 1e-3, 100) == 1e-3 * s / 100
    assert warmup_lr(100, 1e-3, 100) == 1e-3
    assert warmup_lr(5000, 1e-3, 100) == 1e-3
    assert warmup_lr(1, 0.5, 0) == 0.5
