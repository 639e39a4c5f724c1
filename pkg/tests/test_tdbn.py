import numpy as np
import pytest

from fdcheck import numeric_grad, rel_error
from spikeforge.errors import ShapeError, StateError
from spikeforge.tdbn import TdBN, tdbn_forward_infer, tdbn_forward_train
from spikeforge.tensor import Tensor


def _ref_tdbn(x, lam, beta, alpha=1.0, v_th=0.5, eps=1e-5):
    # channel axis 2, statistics over everything else
    axes = tuple(a for a in range(x.ndim) if a != 2)
    shape = [1] * x.ndim
    shape[2] = -1
    mean = x.mean(axis=axes, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
    return lam.reshape(shape) * alpha * v_th * (x - mean) / np.sqrt(var + eps) + beta.reshape(shape)


def test_output_statistics_mlp_layout():
    rng = np.random.default_rng(0)
    x = rng.normal(2.0, 3.0, size=(4, 2500, 3))
    out = tdbn_forward_train(TdBN(3), Tensor(x)).data
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 0, atol=1e-6)
    np.testing.assert_allclose(out.std(axis=(0, 1)), 0.5, rtol=1e-4)


def test_constant_channel_gives_beta():
    bn = TdBN(2)
    bn.beta.data[:] = [0.3, -0.1]
    x = np.ones((2, 3, 2, 4, 4)) * 7.0
    out = bn.forward_train(Tensor(x)).data
    np.testing.assert_allclose(out[:, :, 0], 0.3, atol=1e-12)
    np.testing.assert_allclose(out[:, :, 1], -0.1, atol=1e-12)


def test_monte_carlo_std():
    # N(3, 4): std 2 -> normalized std alpha * v_th = 0.5
    x = np.random.default_rng(1).normal(3.0, 2.0, size=(4, 25_000, 1))
    out = TdBN(1).forward_train(Tensor(x)).data
    assert abs(out.std() - 0.5) / 0.5 < 0.01


def test_matches_reference_formula_conv_layout():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 2, 4, 5, 5))
    bn = TdBN(4, alpha=1.7)
    bn.lam.data[:] = rng.uniform(0.5, 2, 4)
    bn.beta.data[:] = rng.normal(size=4)
    out = bn.forward_train(Tensor(x)).data
    np.testing.assert_allclose(out, _ref_tdbn(x, bn.lam.data, bn.beta.data, alpha=1.7), atol=1e-12)


def test_gradients_match_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 2, 3, 2, 2))
    lam, beta = rng.uniform(0.5, 1.5, 3), rng.normal(size=3)
    w = rng.normal(size=x.shape)
    bn = TdBN(3)
    bn.lam.data[:], bn.beta.data[:] = lam, beta
    X = Tensor(x.copy(), requires_grad=True)
    (bn.forward_train(X) * Tensor(w)).sum().backward()
    num_x = numeric_grad(lambda v: (_ref_tdbn(v, lam, beta) * w).sum(), x.copy())
    num_l = numeric_grad(lambda v: (_ref_tdbn(x, v, beta) * w).sum(), lam.copy())
    num_b = numeric_grad(lambda v: (_ref_tdbn(x, lam, v) * w).sum(), beta.copy())
    assert rel_error(X.grad, num_x) < 1e-4
    assert rel_error(bn.lam.grad, num_l) < 1e-4
    assert rel_error(bn.beta.grad, num_b) < 1e-4


def test_time_permutation_leaves_statistics_unchanged():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 3, 2))
    perm = rng.permutation(5)
    a, b = TdBN(2), TdBN(2)
    out_a = a.forward_train(Tensor(x)).data
    out_b = b.forward_train(Tensor(x[perm])).data
    np.testing.assert_allclose(a.running_mean, b.running_mean, atol=1e-15)
    np.testing.assert_allclose(a.running_var, b.running_var, atol=1e-15)
    np.testing.assert_allclose(out_a[perm], out_b, atol=1e-14)


def test_infer_requires_stats():
    with pytest.raises(StateError):
        tdbn_forward_infer(TdBN(2), Tensor(np.zeros((1, 1, 2))))


def test_infer_affine_with_unit_stats():
    bn = TdBN(3, eps=0.0)
    bn.running_mean, bn.running_var = np.zeros(3), np.ones(3)
    x = np.random.default_rng(5).normal(size=(2, 4, 3))
    np.testing.assert_allclose(bn.forward_infer(Tensor(x)).data, 0.5 * x, atol=1e-15)


def test_infer_is_deterministic_and_read_only():
    bn = TdBN(2)
    x = Tensor(np.random.default_rng(6).normal(size=(2, 8, 2)))
    bn.forward_train(x)
    rm = bn.running_mean.copy()
    a, b = bn.forward_infer(x).data, bn.forward_infer(x).data
    assert np.array_equal(a, b) and np.array_equal(rm, bn.running_mean)


def test_train_and_infer_converge_on_fixed_stream():
    # stationary stream of one fixed batch: running stats converge to its statistics
    x = Tensor(np.random.default_rng(7).normal([1.0, -2.0, 0.5], [2.0, 0.5, 1.0], size=(4, 256, 3)))
    bn = TdBN(3)
    for _ in range(200):
        train = bn.forward_train(x).data
    assert np.abs(bn.forward_infer(x).data - train).max() < 1e-2


def _random_stream_gap(batch, seed=8):
    rng = np.random.default_rng(seed)
    mu, sd = [1.0, -2.0, 0.5], [2.0, 0.5, 1.0]
    bn = TdBN(3)
    for _ in range(200):
        bn.forward_train(Tensor(rng.normal(mu, sd, size=(2, batch, 3))))
    x = Tensor(rng.normal(mu, sd, size=(2, batch, 3)))
    return np.abs(bn.forward_infer(x).data - bn.forward_train(x).data).mean()


def test_random_stream_gap_is_sampling_noise():
    # batch statistics carry O(1/sqrt(N)) noise, so the gap shrinks with batch size
    small, large = _random_stream_gap(128), _random_stream_gap(8192)
    assert large < small / 4
    assert large < 1e-2


def test_running_var_nonnegative_and_shapes():
    bn = TdBN(4)
    bn.forward_train(Tensor(np.random.default_rng(8).normal(size=(2, 3, 4))))
    assert bn.running_var.shape == (4,) and np.all(bn.running_var >= 0)
    assert bn.lam.shape == (4,) and bn.beta.shape == (4,)


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        TdBN(3).forward_train(Tensor(np.zeros((2, 2, 4))))
