import numpy as np
import pytest

from tiergan import ops
from tiergan.errors import ShapeError
from tiergan.tensor import Tensor, backward, no_grad, parameter, precision

from oracles import central_difference, max_rel_err


def test_product_rule():
    with precision(np.float64):
        a, b = parameter([2.0]), parameter([-3.0])
        backward(ops.sum(a * b))
    assert a.grad[0] == -3.0 and b.grad[0] == 2.0


def test_fan_out_sums_gradients():
    with precision(np.float64):
        x = parameter([1.5, -0.5])
        y = x * x + x  # x feeds three edges
        backward(ops.sum(y))
    np.testing.assert_allclose(x.grad, 2 * np.array([1.5, -0.5]) + 1)


def test_duplicated_subgraph_matches_doubling():
    with precision(np.float64):
        x1 = parameter([0.3, 0.7])
        h = ops.sigmoid(x1)
        backward(ops.sum(h + h))
        x2 = parameter([0.3, 0.7])
        backward(ops.sum(ops.sigmoid(x2) * 2.0))
    np.testing.assert_allclose(x1.grad, x2.grad, rtol=1e-12)


def test_leaf_grads_accumulate_until_zeroed():
    x = parameter([1.0])
    backward(ops.sum(x * 3.0))
    backward(ops.sum(x * 3.0))
    assert x.grad[0] == pytest.approx(6.0)
    x.zero_grad()
    assert x.grad is None


def test_non_scalar_root_rejected():
    x = parameter(np.ones(3))
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_root_without_grad_rejected():
    with pytest.raises(ShapeError):
        backward(ops.sum(Tensor(np.ones(2))))


def test_no_grad_records_nothing():
    x = parameter([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.parents == ()


def test_precision_context_restores_dtype():
    with precision(np.float64):
        assert parameter([1.0]).dtype == np.float64
    assert parameter([1.0]).dtype == np.float32


def test_chain_against_central_difference(rng):
    x0 = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 2))
    b = rng.standard_normal(2)

    def f(x):
        with precision(np.float64):
            return float(ops.mean(ops.sigmoid(ops.leaky_relu(ops.dense_forward(x, w, b), 0.2))).data)

    with precision(np.float64):
        x = parameter(x0)
        backward(ops.mean(ops.sigmoid(ops.leaky_relu(ops.dense_forward(x, w, b), 0.2))))
    assert max_rel_err(x.grad, central_difference(f, x0)) < 1e-6
