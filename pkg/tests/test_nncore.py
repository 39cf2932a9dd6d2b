import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from srsan.gradcheck import numeric_grad
from srsan.nncore import (ContractError, DegenerateMaskError, masked_row_softmax, matmul,
                          matmul_grads, relu, relu_grad, softmax_grad)


def test_matmul_identity_and_zero(rng):
    b = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(matmul(np.eye(3), b), b)
    np.testing.assert_array_equal(matmul(np.zeros((2, 3)), b), np.zeros((2, 4)))


def test_matmul_hand_example():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
    np.testing.assert_array_equal(out, [[17.0], [39.0]])


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(ContractError, match=r"\(2, 3\).*\(4, 1\)"):
        matmul(np.zeros((2, 3)), np.zeros((4, 1)))


@pytest.mark.parametrize("row, mask, expected", [
    ([0.0, 0.0], [True, True], [0.5, 0.5]),
    ([math.log(2), 0.0], [True, True], [2 / 3, 1 / 3]),
    ([5.0, 5.0, 5.0], [True, True, False], [0.5, 0.5, 0.0]),
])
def test_softmax_examples(row, mask, expected):
    out = masked_row_softmax(np.array([row]), np.array(mask))
    np.testing.assert_allclose(out[0], expected, atol=1e-12)


def test_softmax_masked_entries_exactly_zero(rng):
    logits = rng.standard_normal((4, 6)).astype(np.float32) * 50
    mask = np.array([True, True, True, False, False, False])
    out = masked_row_softmax(logits, mask)
    assert np.all(out[:, 3:] == 0.0)


def test_softmax_all_masked_row_errors():
    with pytest.raises(DegenerateMaskError):
        masked_row_softmax(np.zeros((2, 3)), np.array([[True, False, False], [False] * 3]))


def test_softmax_mask_length_mismatch():
    with pytest.raises(ContractError):
        masked_row_softmax(np.zeros((1, 3)), np.array([True, True]))


@settings(max_examples=200, deadline=None)
@given(
    logits=arrays(np.float64, (3, 5), elements=st.floats(-30, 30)),
    valid=st.integers(1, 5),
    shift=st.floats(-100, 100),
)
def test_softmax_rows_sum_to_one_and_shift_invariant(logits, valid, shift):
    mask = np.arange(5) < valid
    p = masked_row_softmax(logits, mask)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p[:, valid:] == 0)
    np.testing.assert_allclose(masked_row_softmax(logits + shift, mask), p, atol=1e-6)


@pytest.mark.parametrize("x, expected", [
    ([[-1.0, 0.0, 2.0]], [[0.0, 0.0, 2.0]]),
    ([[0.0, 0.0]], [[0.0, 0.0]]),
    ([[3.5, -3.5]], [[3.5, 0.0]]),
])
def test_relu_examples(x, expected):
    np.testing.assert_array_equal(relu(np.array(x)), expected)


def test_zero_upstream_gives_zero_grads(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    ga, gb = matmul_grads(a, b, np.zeros((3, 2)))
    assert not ga.any() and not gb.any()


def test_softmax_grad_uniform_probs_constant_upstream():
    p = np.full((2, 4), 0.25)
    assert np.allclose(softmax_grad(p, np.full((2, 4), 3.0)), 0.0)


def test_relu_grad_at_zero_is_zero():
    np.testing.assert_array_equal(relu_grad(np.array([[0.0, 1.0, -1.0]]), np.ones((1, 3))), [[0, 1, 0]])


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_grads_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 3))
    u = rng.standard_normal((3, 3))
    ga, gb = matmul_grads(a, b, u)
    fn = lambda: float((matmul(a, b) * u).sum())  # noqa: E731
    assert _rel(ga, numeric_grad(fn, a)) <= 1e-6
    assert _rel(gb, numeric_grad(fn, b)) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_softmax_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits, u = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    mask = np.array([True, True, True, False])
    p = masked_row_softmax(logits, mask)
    fn = lambda: float((masked_row_softmax(logits, mask) * u).sum())  # noqa: E731
    assert _rel(softmax_grad(p, u, mask), numeric_grad(fn, logits)) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_relu_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # stay off the kink
    u = rng.standard_normal((3, 4))
    fn = lambda: float((relu(x) * u).sum())  # noqa: E731
    assert _rel(relu_grad(x, u), numeric_grad(fn, x)) <= 1e-6


def test_stacked_matmul_grads_sum_over_shared_operand(rng):
    a = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((4, 5))
    u = rng.standard_normal((2, 3, 5))
    ga, gw = matmul_grads(a, w, u)
    assert ga.shape == a.shape and gw.shape == w.shape
    np.testing.assert_allclose(gw, a[0].T @ u[0] + a[1].T @ u[1])


def test_backward_kernels_reject_bad_shapes():
    with pytest.raises(ContractError):
        matmul_grads(np.zeros((2, 3)), np.zeros((3, 4)), np.zeros((2, 5)))
    with pytest.raises(ContractError):
        softmax_grad(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ContractError):
        relu_grad(np.zeros((2, 3)), np.zeros((3, 2)))


def test_kernels_deterministic(rng):
    x = rng.standard_normal((5, 7)).astype(np.float32)
    w = rng.standard_normal((7, 3)).astype(np.float32)
    mask = np.arange(7) < 4
    assert np.array_equal(matmul(x, w), matmul(x, w))
    assert np.array_equal(masked_row_softmax(x, mask), masked_row_softmax(x, mask))
