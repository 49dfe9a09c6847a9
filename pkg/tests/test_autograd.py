import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from deepbl import autograd as ag
from deepbl.autograd import ShapeError, SingularMatrixError, Tensor, grad_check


def grads_of(fn, *points):
    xs = [Tensor(np.array(p, dtype=float), requires_grad=True) for p in points]
    with ag.use_tape() as tape:
        loss = fn(*xs)
        ag.backward(loss, tape)
    return [x.grad for x in xs]


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(ag.softmax(np.zeros(3), axis=0).data, [1 / 3] * 3)


def test_inverse_of_diagonal():
    np.testing.assert_allclose(ag.matrix_inverse(np.diag([2.0, 4.0])).data, np.diag([0.5, 0.25]))


def test_causal_conv_hand_example():
    # sequence [1,2,3,4], kernel [1,1], zero left padding
    x = np.array([1.0, 2, 3, 4]).reshape(4, 1, 1)
    w = np.ones((2, 1, 1))
    np.testing.assert_allclose(ag.conv1d(x, w).data.ravel(), [1, 3, 5, 7])


def test_conv_matches_naive_loop(rng):
    L, N, cin, cout, width = 6, 3, 2, 4, 3
    x = rng.normal(size=(L, N, cin))
    w = rng.normal(size=(width, cin, cout))
    b = rng.normal(size=cout)
    expected = np.zeros((L, N, cout))
    # tap k reads the input k steps back
    for t in range(L):
        for k in range(width):
            if t - k >= 0:
                expected[t] += x[t - k] @ w[k]
        expected[t] += b
    np.testing.assert_allclose(ag.conv1d(x, w, b).data, expected, atol=1e-12)


def test_quadratic_gradient():
    (g,) = grads_of(lambda x: ag.sum_(ag.mul(x, x)), [1.0, 2.0])
    np.testing.assert_allclose(g, [2.0, 4.0])


def test_inverse_gradient_on_diagonal():
    (g,) = grads_of(lambda a: ag.sum_(ag.matrix_inverse(a)), np.diag([2.0, 4.0]))
    np.testing.assert_allclose(np.diag(g), [-0.25, -0.0625])


def test_sigmoid_slope_at_zero():
    (g,) = grads_of(lambda x: ag.sum_(ag.sigmoid(x)), [0.0])
    assert g[0] == pytest.approx(0.25)


def test_grad_check_examples(rng):
    assert grad_check(lambda x: ag.sum_(ag.tanh(x)), rng.normal(size=(3, 3))) < 1e-4
    assert grad_check(lambda a: ag.sum_(ag.matrix_inverse(ag.add(a, 3 * np.eye(4)))), rng.normal(size=(4, 4))) < 1e-4
    assert grad_check(lambda x: ag.mul(ag.sum_(ag.mul(x, 0.0)), 1.0), rng.normal(size=3)) == 0.0


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with ag.use_tape() as tape:
        y = ag.mul(x, 2.0)
        with pytest.raises(ShapeError):
            ag.backward(y, tape)


def test_tape_cleared_after_backward():
    x = Tensor(np.ones(2), requires_grad=True)
    with ag.use_tape() as tape:
        ag.backward(ag.sum_(ag.exp(x)), tape)
        assert len(tape) == 0


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ag.use_tape() as tape, ag.no_grad():
        ag.sum_(ag.exp(x))
        assert len(tape) == 0


def test_gradients_accumulate_across_uses():
    (g,) = grads_of(lambda x: ag.add(ag.sum_(x), ag.sum_(ag.mul(x, 3.0))), [1.0, 1.0])
    np.testing.assert_allclose(g, [4.0, 4.0])


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        ag.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError, match="matrix_inverse"):
        ag.matrix_inverse(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ag.add(np.ones((2, 3)), np.ones((3, 2)))


def test_singular_matrix_is_refused():
    with pytest.raises(SingularMatrixError):
        ag.matrix_inverse(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        ag.matrix_inverse(np.diag([1.0, 1e-13]))


def test_inverse_times_matrix_is_identity(rng):
    for _ in range(10):
        a = rng.normal(size=(5, 5)) + 5 * np.eye(5)
        np.testing.assert_allclose(ag.matrix_inverse(a).data @ a, np.eye(5), atol=1e-8)


def test_forward_is_bitwise_deterministic(rng):
    a = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    x = rng.normal(size=(4, 2))
    run = lambda: ag.softmax(ag.matmul(ag.matrix_inverse(a), ag.tanh(x)), axis=0).data.tobytes()
    assert run() == run()


def test_dropout_is_identity_at_eval(rng):
    x = rng.normal(size=(4, 4))
    np.testing.assert_array_equal(ag.dropout(x, 0.5, rng, training=False).data, x)


def test_dropout_keeps_expectation():
    rng = np.random.default_rng(0)
    out = ag.dropout(np.ones((200, 200)), 0.2, rng, training=True).data
    assert set(np.unique(out)) <= {0.0, 1.25}
    assert out.mean() == pytest.approx(1.0, abs=0.02)


def test_slice_backward_accumulates_repeats():
    (g,) = grads_of(lambda x: ag.sum_(ag.slice_(x, np.array([0, 0, 2]))), [1.0, 1.0, 1.0])
    np.testing.assert_allclose(g, [2.0, 0.0, 1.0])


def test_row_vector_broadcast_gradient():
    ga, gb = grads_of(lambda a, b: ag.sum_(ag.mul(a, b)), np.ones((3, 2)), [[2.0, 3.0]])
    np.testing.assert_allclose(ga, [[2, 3]] * 3)
    np.testing.assert_allclose(gb, [[3.0, 3.0]])


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3)))
def test_softmax_rows_on_simplex(x):
    out = ag.softmax(x, axis=1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("op", [ag.exp, ag.tanh, ag.sigmoid, lambda x: ag.leaky_relu(x, 0.2)])
def test_unary_ops_gradcheck_on_ten_instances(op):
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.normal(size=(2, 3))
        x[np.abs(x) < 0.05] += 0.2
        assert grad_check(lambda t: ag.sum_(ag.mul(op(t), np.arange(1.0, 7.0).reshape(2, 3))), x) < 1e-4
