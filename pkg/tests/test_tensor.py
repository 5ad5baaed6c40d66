import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from raunet import tensor as T
from raunet.gradcheck import check_gradients
from raunet.tensor import NonFiniteError, Precision, PrecisionError, Tape, Tensor, backward

from conftest import t64


def grads_of(fn, *arrays):
    leaves = [t64(a, grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(*leaves)
    backward(loss, tape)
    return [leaf.grad for leaf in leaves]


def test_add_values():
    out = T.add(t64([1, 2]), t64([3, 4]))
    np.testing.assert_array_equal(out.data, [4, 6])


def test_mul_by_zeros_gives_zero_value_and_grad():
    a = np.arange(6.0).reshape(2, 3)
    (g,) = grads_of(lambda x: T.reduce_sum(T.mul(x, t64(np.zeros_like(a)))), a)
    np.testing.assert_array_equal(g, np.zeros_like(a))


def test_channel_broadcast_matches_loop():
    a = np.ones((1, 2, 2, 2))
    out = T.mul(t64(a), t64([2.0, 3.0])).data
    expected = np.empty_like(a)
    for n in range(1):
        for c in range(2):
            for i in range(2):
                for j in range(2):
                    expected[n, c, i, j] = a[n, c, i, j] * [2.0, 3.0][c]
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("b_shape", [(3,), (1, 3, 1, 1), (2, 3, 1, 1)])
def test_broadcast_gradient_is_summed_over_broadcast_axes(rng, b_shape):
    a = rng.standard_normal((2, 3, 4, 5))
    b = rng.standard_normal(b_shape)
    w = rng.standard_normal(a.shape)
    ga, gb = grads_of(lambda x, y: T.reduce_sum(T.mul(T.mul(x, y), t64(w))), a, b)

    full = (a * w)
    oracle = np.zeros(b_shape)
    for n in range(2):
        for c in range(3):
            for i in range(4):
                for j in range(5):
                    if len(b_shape) == 1:
                        oracle[c] += full[n, c, i, j]
                    else:
                        oracle[n if b_shape[0] == 2 else 0, c, 0, 0] += full[n, c, i, j]
    np.testing.assert_allclose(gb, oracle, rtol=1e-12)
    np.testing.assert_allclose(ga, w * b.reshape((1, 3, 1, 1) if len(b_shape) == 1 else b_shape))


def test_broadcast_rejects_other_shapes():
    with pytest.raises(ValueError):
        T.add(t64(np.ones((2, 3, 4, 4))), t64(np.ones(4)))
    with pytest.raises(ValueError):
        T.add(t64(np.ones((2, 3))), t64(np.ones(3)))


def test_sum_and_mean():
    assert T.reduce_sum(t64([[1, 2], [3, 4]]), (0, 1)).item() == 10
    c = t64(np.full((3, 4, 5), 2.5))
    for axes in (None, 0, (1, 2), -1):
        np.testing.assert_array_equal(T.reduce_mean(c, axes).data, 2.5)


def test_sum_gradient_is_one_everywhere(rng):
    a = rng.standard_normal((3, 4))
    (g,) = grads_of(T.reduce_sum, a)
    np.testing.assert_array_equal(g, np.ones_like(a))


def test_mean_gradient_is_reciprocal_count(rng):
    a = rng.standard_normal((3, 4, 2))
    (g,) = grads_of(lambda x: T.reduce_sum(T.reduce_mean(x, (0, 2))), a)
    np.testing.assert_allclose(g, np.full_like(a, 1 / 6))


def test_reduce_rejects_bad_axis():
    with pytest.raises(ValueError):
        T.reduce_sum(t64(np.ones((2, 2))), 2)


def test_zero_extent_tensor_rejected():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


def test_square_gradient():
    (g,) = grads_of(lambda w: T.reduce_sum(T.mul(w, w)), [3.0])
    np.testing.assert_array_equal(g, [6.0])


def test_unused_parameter_gets_no_gradient():
    p = t64([1.0, 2.0], grad=True)
    w = t64([3.0], grad=True)
    with Tape() as tape:
        loss = T.reduce_sum(T.mul(w, w))
    backward(loss, tape)
    assert p.grad is None or not np.any(p.grad)


def test_shared_leaf_accumulates_across_uses():
    (g,) = grads_of(lambda x: T.reduce_sum(T.add(T.mul(x, x), T.scale(x, 3.0))), [2.0, -1.0])
    np.testing.assert_allclose(g, [7.0, 1.0])


def test_backward_needs_scalar_loss():
    w = t64([1.0, 2.0], grad=True)
    with Tape() as tape:
        out = T.mul(w, w)
    with pytest.raises(ValueError, match="scalar"):
        backward(out, tape)


def test_backward_needs_loss_from_tape():
    w = t64([1.0], grad=True)
    with Tape():
        loss = T.reduce_sum(T.mul(w, w))
    with pytest.raises(ValueError, match="tape"):
        backward(loss, Tape())


def test_tape_is_cleared_and_reusable():
    w = t64([2.0], grad=True)
    tape = Tape()
    for _ in range(2):
        w.grad = None
        with tape:
            loss = T.reduce_sum(T.mul(w, w))
        assert len(tape.nodes) > 0
        backward(loss, tape)
        assert tape.nodes == []
        np.testing.assert_array_equal(w.grad, [4.0])


def test_tape_order_is_topological():
    x = t64([1.0, 2.0], grad=True)
    with Tape() as tape:
        y = T.mul(x, x)
        z = T.add(y, x)
        T.reduce_sum(z)
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert inp is x or id(inp) in produced
        produced.add(id(node.output))


def test_nothing_recorded_without_grad_inputs():
    with Tape() as tape:
        T.mul(t64([1.0]), t64([2.0]))
    assert tape.nodes == []


def test_mixed_precision_is_rejected():
    a = Tensor(np.ones(3, np.float32))
    b = Tensor(np.ones(3, np.float64))
    with pytest.raises(PrecisionError):
        T.add(a, b)


def test_precision_of_dtype():
    assert Precision.of(np.float32) is Precision.F32
    assert Precision.F64.dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


def test_log_of_non_positive_raises():
    with pytest.raises(FloatingPointError):
        T.log(t64([1.0, 0.0]))


def test_finite_check_flag():
    big = t64([1e308])
    with np.errstate(over="ignore"):
        T.set_check_finite(True)
        try:
            with pytest.raises(NonFiniteError):
                T.scale(big, 10.0)
        finally:
            T.set_check_finite(False)
        assert np.isinf(T.scale(big, 10.0).data[0])


def test_composite_graph_matches_finite_differences(rng):
    a = rng.standard_normal((2, 3, 2, 2))
    b = rng.standard_normal(3)
    c = rng.uniform(0.5, 2.0, (2, 3, 2, 2))

    def fn(x, y, z):
        return T.reduce_mean(T.mul(T.log(T.add(T.mul(z, z), t64(np.ones_like(c)))), T.sub(x, y)))

    assert check_gradients(fn, [a, b, c]) < 1e-6


arrays = hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
                    elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=40, deadline=None)
@given(arrays)
def test_sum_is_linear(a):
    s = T.reduce_sum(t64(a)).item()
    s2 = T.reduce_sum(t64(2 * a)).item()
    assert s2 == pytest.approx(2 * s, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays, st.floats(-3, 3))
def test_scale_gradient_is_constant(a, k):
    (g,) = grads_of(lambda x: T.reduce_sum(T.scale(x, k, 1.0)), a)
    np.testing.assert_allclose(g, np.full(a.shape, k))
