import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ci2pvit.core import (ParamStore, Rng, Tensor, adam_step, backward, conv2d, cross_entropy, gelu,
                          grad_check, layernorm, matmul, no_grad, precision, relu6, softmax)
from ci2pvit.core.functional import activation, conv_transpose2d
from ci2pvit.core.tensor import clamp, log
from ci2pvit.errors import ContractError, DimensionError, NonFiniteError

from oracles import (adam_scalar, conv2d_loops, gelu_tanh, layernorm_rows, matmul_loops,
                     softmax_formula)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


# -- matmul -----------------------------------------------------------------

def test_matmul_identity_leaves_b_unchanged():
    b = np.arange(6, dtype=np.float32).reshape(3, 2)
    out = matmul(Tensor(np.eye(3)), Tensor(b))
    np.testing.assert_array_equal(out.data, b)


def test_matmul_hand_example():
    out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
    np.testing.assert_array_equal(out.data, [[17], [39]])


def test_matmul_seed42_matches_loops(f64):
    rng = np.random.default_rng(42)
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, matmul_loops(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


# -- conv2d -----------------------------------------------------------------

def test_conv2d_scalar_kernel():
    out = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
    np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 2.0))


def test_conv2d_window_sums_stride2():
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 2, 2))), stride=2)
    expected = [[0 + 1 + 4 + 5, 2 + 3 + 6 + 7], [8 + 9 + 12 + 13, 10 + 11 + 14 + 15]]
    np.testing.assert_array_equal(out.data[0], expected)


def test_conv2d_5x5_stride2_pad2_matches_oracle(f64):
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((3, 8, 8)), rng.standard_normal((4, 3, 5, 5)), rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=2)
    assert out.shape == (4, 4, 4)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, 2, 2), atol=1e-10, rtol=0)


@pytest.mark.parametrize("groups,cin,cout", [(2, 4, 6), (3, 3, 3), (3, 3, 6)])
def test_grouped_conv_matches_oracle(f64, groups, cin, cout):
    rng = np.random.default_rng(groups + cout)
    x, w = rng.standard_normal((cin, 6, 5)), rng.standard_normal((cout, cin // groups, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), stride=2, pad=1, groups=groups)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, None, 2, 1, groups), atol=1e-10, rtol=0)


def test_conv2d_batched_equals_per_item(f64):
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), pad=1)
    for i in range(2):
        np.testing.assert_allclose(out.data[i], conv2d(Tensor(x[i]), Tensor(w), pad=1).data, atol=1e-12)


def test_conv2d_channel_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((3, 4, 4))), Tensor(np.ones((2, 2, 1, 1))))


def test_conv_transpose_is_adjoint_of_conv(f64):
    """<conv(x), y> == <x, conv_T(y)> for matching geometry."""
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 3, 5, 5))
    x = rng.standard_normal((3, 8, 8))
    y = rng.standard_normal((4, 4, 4))
    lhs = float((conv2d(Tensor(x), Tensor(w), stride=2, pad=2).data * y).sum())
    back = conv_transpose2d(Tensor(y), Tensor(w), stride=2, pad=2, output_padding=1)
    assert back.shape == (3, 8, 8)
    assert lhs == pytest.approx(float((x * back.data).sum()), abs=1e-10)


# -- activations and normalization -----------------------------------------

def test_activation_examples():
    assert gelu(Tensor(0.0)).item() == 0.0
    assert relu6(Tensor(7.5)).item() == 6.0
    assert relu6(Tensor(-1.0)).item() == 0.0
    assert gelu(Tensor(1.0, dtype=np.float64)).item() == pytest.approx(0.841192, abs=1e-5)
    assert gelu(Tensor(1.0, dtype=np.float64)).item() == pytest.approx(gelu_tanh(1.0), abs=1e-15)
    np.testing.assert_array_equal(activation(Tensor([1.0, -2.0]), "none").data, [1.0, -2.0])
    with pytest.raises(ContractError):
        activation(Tensor([1.0]), "swish")


def test_layernorm_constant_row_collapses_to_beta():
    out = layernorm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, [[0, 0, 0]])


def test_layernorm_two_point(f64):
    out = layernorm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1, 1]], atol=1e-10)


def test_layernorm_moments(f64):
    x = np.random.default_rng(5).standard_normal((4, 8)) * 3 + 2
    out = layernorm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert np.abs(out.mean(axis=1)).max() < 1e-6
    assert np.abs(out.var(axis=1) - 1).max() < 1e-4
    np.testing.assert_allclose(out, layernorm_rows(x, 1e-5), atol=1e-12)


def test_softmax_examples(f64):
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    s = softmax(Tensor([1000.0, 0.0])).data
    assert s[0] == 1.0 and 0 <= s[1] < 1e-300 + 1e-12
    x = np.random.default_rng(7).standard_normal(7)
    np.testing.assert_allclose(softmax(Tensor(x)).data, softmax_formula(x), atol=1e-10, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(values):
    s = softmax(Tensor(np.array(values))).data
    assert abs(s.sum() - 1) < 1e-6 and (s > 0).all()


def test_cross_entropy_examples(f64):
    assert cross_entropy(Tensor([0.0, 0.0]), 0).item() == pytest.approx(math.log(2), abs=1e-12)
    assert cross_entropy(Tensor([1000.0, 0.0]), 0).item() == pytest.approx(0.0, abs=1e-12)
    z = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    backward(cross_entropy(z, 2))
    p = softmax_formula(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(z.grad, p - np.array([0, 0, 1]), atol=1e-10)
    with pytest.raises(ContractError):
        cross_entropy(Tensor([0.0, 1.0]), 2)


# -- autodiff ---------------------------------------------------------------

def test_backward_linear_and_quadratic(f64):
    w = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    backward(w.sum())
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))
    w.grad = None
    backward((w * w).sum())
    np.testing.assert_allclose(w.grad, 2 * w.data, atol=1e-15)


def test_backward_accumulates_over_reused_nodes(f64):
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    backward((y + y * 3.0).sum())  # d/dx 4x^2 = 8x
    assert x.grad[0] == pytest.approx(16.0)


def test_backward_rejects_non_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_deep_graph_does_not_recurse(f64):
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    backward(y.sum())
    assert x.grad[0] == 1.0


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.op == "mul"


def test_non_finite_raises_with_op_name():
    with pytest.raises(NonFiniteError, match="log"):
        log(Tensor([0.0]))


def test_clamp_gradient_is_masked(f64):
    x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    backward(clamp(x, -1.0, 1.0).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


# -- grad_check -------------------------------------------------------------

def test_grad_check_sum_of_squares(f64):
    p = Tensor(np.random.default_rng(2).standard_normal(10))
    assert grad_check(lambda t: (t * t).sum(), p) < 1e-8


def test_grad_check_softmax_ce(f64):
    assert grad_check(lambda t: cross_entropy(t, 2), Tensor([1.0, 2.0, 3.0])) < 1e-7


def test_grad_check_contracts():
    with pytest.raises(ContractError):
        grad_check(lambda t: t.sum(), Tensor(np.ones(2), dtype=np.float32))
    with precision(np.float64):
        with pytest.raises(ContractError):
            grad_check(lambda t: t.sum(), Tensor(np.ones(2)), h=1e-2)


def test_grad_check_restores_point(f64):
    data = np.random.default_rng(3).standard_normal(5)
    p = Tensor(data.copy())
    grad_check(lambda t: (t * t * t).sum(), p)
    np.testing.assert_array_equal(p.data, data)
    assert p.grad is None and not p.requires_grad


# -- params and Adam --------------------------------------------------------

def test_adam_first_step_closed_form(f64):
    store = ParamStore()
    w = store.add("w", np.array([0.0]))
    w.grad = np.array([1.0])
    adam_step(store, lr=1e-4, t=1)
    assert w.data[0] == pytest.approx(-1e-4, rel=1e-7)


def test_adam_frozen_param_unchanged():
    store = ParamStore()
    w = store.add("w", np.array([0.5, -0.5]), frozen=True)
    before = w.data.copy()
    w.grad = np.array([1.0, 1.0])
    for t in range(1, 4):
        adam_step(store, lr=0.1, t=t)
    assert w.data.tobytes() == before.tobytes()
    entry = store.entry("w")
    assert entry.adam_m is None and entry.adam_v is None


def test_adam_matches_scalar_recurrence(f64):
    store = ParamStore()
    w = store.add("w", np.array([1.0]))
    ref = adam_scalar(1.0, lambda v: 2 * v, 10, lr=0.05)
    prev = 1.0
    for t in range(1, 11):
        backward((w * w).sum())
        adam_step(store, lr=0.05, t=t)
        assert w.data[0] == pytest.approx(ref[t - 1], abs=1e-12)
        assert abs(w.data[0]) < abs(prev)
        prev = w.data[0]


def test_adam_requires_grads_for_trainable():
    store = ParamStore()
    store.add("a", np.ones(2))
    with pytest.raises(ContractError, match="'a'"):
        adam_step(store, lr=0.1)


def test_param_store_names_unique():
    store = ParamStore()
    store.add("x", np.ones(1))
    with pytest.raises(ContractError):
        store.add("x", np.ones(1))


def test_rng_determinism_and_spawn_independence():
    a, b = Rng(5), Rng(5)
    np.testing.assert_array_equal(a.normal(1.0, (4,)), b.normal(1.0, (4,)))
    c = Rng(5)
    child1 = c.spawn("x").uniform(0, 1, (3,))
    child2 = Rng(5).spawn("x").uniform(0, 1, (3,))
    np.testing.assert_array_equal(child1, child2)
    assert not np.array_equal(Rng(5).spawn("y").uniform(0, 1, (3,)), child1)
    t = Rng(0).trunc_normal(1.0, (1000,))
    assert np.abs(t).max() <= 2.0
