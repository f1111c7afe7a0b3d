import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glnet import tensor as T
from glnet.tensor import Tensor

torch = pytest.importorskip("torch")


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def tleaf(a):
    return torch.tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def backprop_both(ours, theirs, seed=0):
    """Contract both outputs with the same random weights and backprop."""
    w = np.random.default_rng(seed).standard_normal(ours.shape)
    (ours * Tensor(w)).sum().backward()
    (theirs * torch.tensor(w)).sum().backward()


# -- forward/backward against torch --------------------------------------------------
@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 4), (1, 3, 7), (1, 0, 1)])
def test_conv2d_matches_torch(rng, stride, pad, k):
    x, w, b = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, k, k)), rng.standard_normal(4)
    X, W, B = leaf(x), leaf(w), leaf(b)
    tx, tw, tb = tleaf(x), tleaf(w), tleaf(b)
    out = T.conv2d(X, W, B, stride, pad)
    ref = torch.nn.functional.conv2d(tx, tw, tb, stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, ref.detach().numpy(), rtol=1e-10, atol=1e-10)
    backprop_both(out, ref)
    for ours, theirs in ((X, tx), (W, tw), (B, tb)):
        np.testing.assert_allclose(ours.grad, theirs.grad.numpy(), rtol=1e-9, atol=1e-10)


def test_conv2d_unbatched_equals_batched(rng):
    x, w = rng.standard_normal((3, 6, 6)), rng.standard_normal((2, 3, 3, 3))
    single = T.conv2d(Tensor(x), Tensor(w), None, 1, 1).data
    batched = T.conv2d(Tensor(x[None]), Tensor(w), None, 1, 1).data[0]
    np.testing.assert_allclose(single, batched, rtol=1e-12)


@pytest.mark.parametrize("kd,pad", [(2, 1), (3, 1), (2, 0)])
def test_conv3d_matches_torch_with_unpadded_depth(rng, kd, pad):
    x, w, b = rng.standard_normal((3, 5, 6, 6)), rng.standard_normal((2, 3, kd, 3, 3)), rng.standard_normal(2)
    X, W, B = leaf(x), leaf(w), leaf(b)
    tx, tw, tb = tleaf(x), tleaf(w), tleaf(b)
    out = T.conv3d(X, W, B, pad)
    ref = torch.nn.functional.conv3d(tx[None], tw, tb, padding=(0, pad, pad))[0]
    assert out.shape == (2, 5 - kd + 1, 6 - 2 + 2 * pad, 6 - 2 + 2 * pad)
    np.testing.assert_allclose(out.data, ref.detach().numpy(), rtol=1e-10, atol=1e-10)
    backprop_both(out, ref)
    for ours, theirs in ((X, tx), (W, tw), (B, tb)):
        np.testing.assert_allclose(ours.grad, theirs.grad.numpy(), rtol=1e-9, atol=1e-10)


def test_transposed_conv_matches_torch(rng):
    x, w, b = rng.standard_normal((2, 4, 5, 5)), rng.standard_normal((4, 3, 4, 4)), rng.standard_normal(3)
    X, W, B = leaf(x), leaf(w), leaf(b)
    tx, tw, tb = tleaf(x), tleaf(w), tleaf(b)
    out = T.transposed_conv2d(X, W, B)
    ref = torch.nn.functional.conv_transpose2d(tx, tw, tb, stride=2, padding=1)
    assert out.shape == (2, 3, 10, 10)
    np.testing.assert_allclose(out.data, ref.detach().numpy(), rtol=1e-10, atol=1e-10)
    backprop_both(out, ref)
    for ours, theirs in ((X, tx), (W, tw), (B, tb)):
        np.testing.assert_allclose(ours.grad, theirs.grad.numpy(), rtol=1e-9, atol=1e-10)


def test_matmul_batched_matches_torch(rng):
    a, b = rng.standard_normal((3, 4, 5)), rng.standard_normal((5, 2))
    A, B = leaf(a), leaf(b)
    ta, tb = tleaf(a), tleaf(b)
    out, ref = T.matmul(A, B), ta @ tb
    np.testing.assert_allclose(out.data, ref.detach().numpy(), rtol=1e-12)
    backprop_both(out, ref)
    np.testing.assert_allclose(A.grad, ta.grad.numpy(), rtol=1e-10)
    np.testing.assert_allclose(B.grad, tb.grad.numpy(), rtol=1e-10)


def test_softmax_and_sigmoid_match_torch(rng):
    x = rng.standard_normal((3, 7)) * 4
    X, tx = leaf(x), tleaf(x)
    out = T.sigmoid(T.softmax(X, axis=-1) * 10.0 - 1.0)
    ref = torch.sigmoid(torch.softmax(tx, dim=-1) * 10.0 - 1.0)
    np.testing.assert_allclose(out.data, ref.detach().numpy(), rtol=1e-12)
    backprop_both(out, ref)
    np.testing.assert_allclose(X.grad, tx.grad.numpy(), rtol=1e-9, atol=1e-12)


def test_broadcast_arithmetic_grads_match_torch(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.uniform(0.5, 2, (3, 1))
    A, B = leaf(a), leaf(b)
    ta, tb = tleaf(a), tleaf(b)
    out = (A * B - A / B + B) @ Tensor(np.ones((4, 2)))
    ref = (ta * tb - ta / tb + tb) @ torch.ones(4, 2, dtype=torch.float64)
    np.testing.assert_allclose(out.data, ref.detach().numpy(), rtol=1e-12)
    backprop_both(out, ref)
    np.testing.assert_allclose(A.grad, ta.grad.numpy(), rtol=1e-10)
    np.testing.assert_allclose(B.grad, tb.grad.numpy(), rtol=1e-10)


# -- contracts ---------------------------------------------------------------------
def test_rowmax_takes_row_maxima_and_routes_gradient_to_argmax():
    a = leaf([[1.0, 3.0, 2.0], [5.0, -1.0, 0.0]])
    out = T.rowmax(a)
    np.testing.assert_array_equal(out.data, [3.0, 5.0])
    out.sum().backward()
    np.testing.assert_array_equal(a.grad, [[0, 1, 0], [1, 0, 0]])


def test_rowmax_tie_goes_to_first_index():
    a = leaf([[2.0, 2.0, 1.0]])
    T.rowmax(a).sum().backward()
    np.testing.assert_array_equal(a.grad, [[1, 0, 0]])


def test_rowmax_rejects_non_matrix():
    with pytest.raises(ValueError):
        T.rowmax(leaf(np.zeros(3)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
def test_softmax_is_a_distribution(values):
    p = T.softmax_vec(Tensor(np.array(values))).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-9


def test_softmax_rejects_empty():
    with pytest.raises(ValueError):
        T.softmax_vec(Tensor(np.zeros(0)))


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_conv_rejects_non_integral_extent_and_channel_mismatch():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((1, 6, 6))), Tensor(np.zeros((1, 1, 3, 3))), stride=2, pad=1)
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((2, 6, 6))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv3d_rejects_kernel_deeper_than_input():
    with pytest.raises(ValueError):
        T.conv3d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 1, 3, 3, 3))), spatial_pad=1)


def test_transposed_conv_requires_4x4():
    with pytest.raises(ValueError):
        T.transposed_conv2d(Tensor(np.zeros((1, 3, 3))), Tensor(np.zeros((1, 1, 3, 3))))


def test_backward_requires_scalar_and_accumulates_leaf_grads():
    x = leaf([1.0, 2.0])
    with pytest.raises(ValueError):
        (x * 2.0).backward()
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_shared_subexpression_gradient_accumulates():
    x = leaf([1.5])
    y = x * x
    (y + y * x).sum().backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    np.testing.assert_allclose(x.grad, [2 * 1.5 + 3 * 1.5 ** 2])


def test_non_finite_forward_raises():
    with pytest.raises(FloatingPointError):
        T.log(Tensor(np.array([-1.0])))


def test_float32_is_the_working_dtype_and_float64_is_kept():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64
    assert leaf(np.ones(3)).sum().dtype == np.float64


def test_stack_unstack_round_trip(rng):
    parts = [leaf(rng.standard_normal((2, 3))) for _ in range(4)]
    s = T.stack(parts, axis=1)
    assert s.shape == (2, 4, 3)
    back = T.unstack(s, axis=1)
    for p, b in zip(parts, back):
        np.testing.assert_array_equal(p.data, b.data)
    with pytest.raises(ValueError):
        T.stack([leaf(np.zeros(2)), leaf(np.zeros(3))])


def test_getitem_with_repeated_indices_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    x[np.array([0, 0, 2])].sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])
