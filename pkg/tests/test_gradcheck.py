import numpy as np
import pytest

from topicfuse import autograd as ag
from topicfuse.autograd import Tape, Tensor
from topicfuse.harness.gradcheck import (OP_NAMES, CheckResult, check_gradients,
                                         composed_loss_check, op_check, relative_error)


@pytest.mark.parametrize("name", OP_NAMES)
def test_operation_gradient(name):
    r = op_check(name, n_points=10)
    assert r.rel_error < 1e-3, r


@pytest.mark.parametrize("kind", ["concat", "attention"])
def test_composed_pretraining_loss(kind):
    results = composed_loss_check(kind, n_points=10)
    assert len(results) > 30
    bad = [r for r in results if not r.ok]
    assert not bad, bad


def test_relative_error_definition():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == 1.0
    assert CheckResult("x", 9e-4, 1).ok and not CheckResult("x", 1e-3, 1).ok


def test_check_catches_a_wrong_gradient():
    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)

    def bad_square(a):
        # forward a**2, backward claims 3a
        return ag._make(a.data ** 2, (a,), lambda g: (3 * g * a.data,))

    results = check_gradients(lambda: ag.tsum(bad_square(x)), [("x", x)])
    assert results[0].rel_error > 0.1


def test_float32_parameters_rejected():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        check_gradients(lambda: ag.tsum(x * x), [("x", x)])


def test_check_leaves_parameters_unchanged():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 3)), requires_grad=True)
    before = x.data.copy()
    check_gradients(lambda: ag.tsum(ag.exp(x)), [("x", x)], n_points=9)
    np.testing.assert_array_equal(x.data, before)
