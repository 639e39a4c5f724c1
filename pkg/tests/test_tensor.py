import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import numeric_grad, rel_error
from spikeforge.errors import ContractError, DomainError, ShapeError
from spikeforge.tensor import (Tensor, cbrt, conv2d, elementwise, getitem, matmul, reduce,
                               relu, stack, tanh)


def test_matmul_identity():
    out = matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_hand_arithmetic():
    assert matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_matches_fd():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    A = Tensor(a.copy(), requires_grad=True)
    matmul(A, Tensor(b)).sum().backward()
    num = numeric_grad(lambda x: (x @ b).sum(), a.copy())
    assert rel_error(A.grad, num) < 1e-5


def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_all_ones_sum():
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.data.tolist() == [[[[9.0]]]]


def _conv_ref(x, w, stride, pad):
    # direct loop, independent of the im2col path
    B, C, H, W = x.shape
    F, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2 * pad - kh) // stride + 1, (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, F, Ho, Wo))
    for b in range(B):
        for f in range(F):
            for i in range(Ho):
                for j in range(Wo):
                    out[b, f, i, j] = (xp[b, :, i * stride:i * stride + kh,
                                          j * stride:j * stride + kw] * w[f]).sum()
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_grads_match_fd(stride, pad):
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    g = rng.normal(size=_conv_ref(x, w, stride, pad).shape)
    X, Wt = Tensor(x.copy(), requires_grad=True), Tensor(w.copy(), requires_grad=True)
    out = conv2d(X, Wt, stride, pad)
    np.testing.assert_allclose(out.data, _conv_ref(x, w, stride, pad), atol=1e-12)
    (out * Tensor(g)).sum().backward()
    num_x = numeric_grad(lambda v: (_conv_ref(v, w, stride, pad) * g).sum(), x.copy())
    num_w = numeric_grad(lambda v: (_conv_ref(x, v, stride, pad) * g).sum(), w.copy())
    assert rel_error(X.grad, num_x) < 1e-4
    assert rel_error(Wt.grad, num_w) < 1e-4


def test_conv_non_integral_extent():
    with pytest.raises(ShapeError, match="non-integral"):
        conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), stride=2)


def test_elementwise_values():
    assert elementwise("tanh", Tensor(0.0)).item() == 0.0
    assert elementwise("cbrt", Tensor(8.0)).item() == 2.0
    assert elementwise("compare_ge", Tensor([0.5, 0.2]), 0.5).data.tolist() == [1.0, 0.0]
    with pytest.raises(ContractError):
        elementwise("sigmoid", Tensor(0.0))


def test_tanh_grad_matches_fd():
    x = Tensor(0.7, requires_grad=True)
    tanh(x).backward()
    num = (np.tanh(0.7 + 1e-5) - np.tanh(0.7 - 1e-5)) / 2e-5
    assert abs(x.grad - num) / abs(num) < 1e-6


@pytest.mark.parametrize("fn,ref", [
    (tanh, np.tanh),
    (cbrt, np.cbrt),
    (relu, lambda v: np.maximum(v, 0)),
    (lambda t: t ** 3.0, lambda v: v ** 3),
    (lambda t: t * t - t * 2.0, lambda v: v * v - 2 * v),
])
def test_elementwise_grads_match_fd(fn, ref):
    rng = np.random.default_rng(2)
    x = rng.uniform(0.2, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
    if fn is cbrt or fn is relu:
        x = np.abs(x)
    X = Tensor(x.copy(), requires_grad=True)
    fn(X).sum().backward()
    assert rel_error(X.grad, numeric_grad(lambda v: ref(v).sum(), x.copy())) < 1e-4


def test_compare_ge_has_no_gradient():
    x = Tensor([1.0, -1.0], requires_grad=True)
    assert not elementwise("compare_ge", x, 0.0).requires_grad


def test_non_broadcastable_raises():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))


def test_reduce_values():
    x = Tensor([1.0, 2.0, 3.0])
    assert reduce(x, None, "mean").item() == 2.0
    assert reduce(x, None, "var").item() == pytest.approx(2 / 3, abs=1e-15)
    assert reduce(x, 0, "sum").item() == 6.0


def test_mean_grad_is_one_over_n():
    x = Tensor(np.ones(5), requires_grad=True)
    reduce(x, None, "mean").backward()
    np.testing.assert_allclose(x.grad, np.full(5, 0.2))


def test_var_grad_matches_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 3))
    X = Tensor(x.copy(), requires_grad=True)
    (reduce(X, 0, "var") * Tensor([1.0, 2.0, 3.0])).sum().backward()
    num = numeric_grad(lambda v: (v.var(axis=0) * [1, 2, 3]).sum(), x.copy())
    assert rel_error(X.grad, num) < 1e-6


def test_empty_reduction_raises():
    with pytest.raises(DomainError):
        reduce(Tensor(np.ones(3)), (), "sum")
    with pytest.raises(DomainError):
        reduce(Tensor(np.ones((0, 3))), 0, "mean")


def test_backward_sum():
    x = Tensor(np.zeros(4), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1, 1])


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = (x * x).sum()
    y.backward()
    y.backward()
    np.testing.assert_array_equal(x.grad, [4, 8])


def test_backward_needs_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_intermediates_receive_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * 3.0
    z = tanh(y)
    z.sum().backward()
    assert y.grad is not None and z.grad is not None and x.grad is not None


def test_ops_do_not_mutate_inputs():
    a = np.array([[1.0, -2.0], [3.0, 4.0]])
    before = a.copy()
    X = Tensor(a, requires_grad=True)
    out = (tanh(X) * X + relu(X)).sum() + reduce(X, 0, "var").sum()
    out.backward()
    np.testing.assert_array_equal(a, before)


def test_getitem_and_stack_grads():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    y = stack([getitem(x, 2), getitem(x, 0) * 2.0])
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])


@st.composite
def broadcast_pair(draw):
    ndim = draw(st.integers(1, 3))
    full = draw(st.lists(st.integers(1, 3), min_size=ndim, max_size=ndim))
    # a: full shape; b: drop some leading axes and set some extents to 1
    lead = draw(st.integers(0, ndim - 1))
    b = [1 if draw(st.booleans()) else n for n in full[lead:]]
    return tuple(full), tuple(b)


@settings(max_examples=60, deadline=None)
@given(broadcast_pair(), st.integers(0, 2**31 - 1))
def test_broadcasting_matches_scalar_loop(shapes, seed):
    sa, sb = shapes
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=sa), rng.normal(size=sb)
    B = Tensor(b, requires_grad=True)
    out = Tensor(a) * B
    out.sum().backward()
    pad = (1,) * (len(sa) - len(sb)) + sb
    bp = b.reshape(pad)
    ref = np.empty(sa)
    grad_ref = np.zeros(pad)
    for idx in np.ndindex(*sa):
        j = tuple(0 if pad[k] == 1 else idx[k] for k in range(len(sa)))
        ref[idx] = a[idx] * bp[j]
        grad_ref[j] += a[idx]
    np.testing.assert_allclose(out.data, ref, rtol=0, atol=0)
    np.testing.assert_allclose(B.grad, grad_ref.reshape(sb), atol=1e-12)


def test_forward_deterministic():
    rng = np.random.default_rng(5)
    x, w = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    a = conv2d(Tensor(x), Tensor(w), 1, 1).data
    b = conv2d(Tensor(x), Tensor(w), 1, 1).data
    assert np.array_equal(a, b)
