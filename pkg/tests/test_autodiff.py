"""Autodiff core: forward values against independent oracles, gradients
against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dmha.autodiff as ad
from dmha.autodiff import BatchNormState, Tensor, grad_check


def _loss(t):
    return (t ** 2).sum()


# ---- matmul -----------------------------------------------------------------


def test_matmul_identity():
    a = np.arange(6.0).reshape(2, 3)
    out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_hand_case():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_gradients(rng):
    b = rng.standard_normal((4, 2))
    x = Tensor(rng.standard_normal((3, 4)))
    assert grad_check(lambda t: _loss(ad.matmul(t, Tensor(b))), x) <= 1e-6
    a = rng.standard_normal((3, 4))
    w = Tensor(rng.standard_normal((4, 2)))
    assert grad_check(lambda t: _loss(ad.matmul(Tensor(a), t)), w) <= 1e-6


def test_matmul_shape_errors():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


# ---- conv2d_same ------------------------------------------------------------


def _conv_oracle(x, w):
    """Direct 6-loop 3x3 same-padding convolution."""
    C, H, W = x.shape
    O = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((O, H, W))
    for o in range(O):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    for di in range(3):
                        for dj in range(3):
                            out[o, i, j] += xp[c, i + di, j + dj] * w[o, c, di, dj]
    return out


def test_conv_identity_kernel():
    x = np.arange(16.0).reshape(1, 4, 4)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out = ad.conv2d_same(Tensor(x), Tensor(w))
    np.testing.assert_array_equal(out.data, x)


def test_conv_padding_arithmetic():
    x = np.ones((1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out = ad.conv2d_same(Tensor(x), Tensor(w)).data[0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == 4.0
    assert out[0, 1] == 6.0


def test_conv_matches_naive_oracle(rng):
    x = rng.standard_normal((3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    out = ad.conv2d_same(Tensor(x), Tensor(w))
    np.testing.assert_allclose(out.data, _conv_oracle(x, w), atol=1e-12)


def test_conv_bias_and_batch(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ad.conv2d_same(Tensor(x), Tensor(w), Tensor(b))
    for i in range(2):
        np.testing.assert_allclose(
            out.data[i], _conv_oracle(x[i], w) + b[:, None, None], atol=1e-12)


def test_conv_gradients(rng):
    w = rng.standard_normal((2, 2, 3, 3))
    x = Tensor(rng.standard_normal((2, 4, 5)))
    assert grad_check(lambda t: _loss(ad.conv2d_same(t, Tensor(w))), x) <= 1e-4
    xd = rng.standard_normal((2, 4, 5))
    wt = Tensor(rng.standard_normal((2, 2, 3, 3)))
    assert grad_check(lambda t: _loss(ad.conv2d_same(Tensor(xd), t)), wt) <= 1e-4
    bt = Tensor(rng.standard_normal(2))
    assert grad_check(
        lambda t: _loss(ad.conv2d_same(Tensor(xd), Tensor(w), t)), bt) <= 1e-4


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        ad.conv2d_same(Tensor(np.zeros((2, 4, 4))),
                       Tensor(np.zeros((1, 3, 3, 3))))


# ---- maxpool ----------------------------------------------------------------


def test_maxpool_hand_case():
    out = ad.maxpool2x2(Tensor([[[1.0, 2.0], [3.0, 4.0]]]))
    np.testing.assert_array_equal(out.data, [[[4.0]]])


def test_maxpool_floor_semantics(rng):
    out = ad.maxpool2x2(Tensor(rng.standard_normal((1, 5, 5))))
    assert out.shape == (1, 2, 2)


def test_maxpool_too_small_rejected():
    with pytest.raises(ValueError):
        ad.maxpool2x2(Tensor(np.zeros((1, 1, 4))))


def test_maxpool_gradient_at_nontied_points(rng):
    base = rng.standard_normal((2, 8, 8))
    x = Tensor(base + rng.permutation(base.size).reshape(base.shape) * 1e-3)
    assert grad_check(lambda t: _loss(ad.maxpool2x2(t)), x) <= 1e-4


def test_maxpool_tie_first_wins():
    x = Tensor(np.full((1, 2, 2), 3.0), requires_grad=True)
    out = ad.maxpool2x2(x)
    out.sum().backward()
    expected = np.zeros((1, 2, 2))
    expected[0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


# ---- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, np.full(3, 1.0 / 3.0), atol=1e-15)


def test_softmax_direct_oracle():
    z = np.array([1.0, 2.0, 3.0])
    out = ad.softmax(Tensor(z))
    np.testing.assert_allclose(out.data, np.exp(z) / np.exp(z).sum(),
                               atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
       st.floats(-100, 100))
@settings(max_examples=50)
def test_softmax_shift_invariance(zs, delta):
    z = np.array(zs)
    a = ad.softmax(Tensor(z)).data
    b = ad.softmax(Tensor(z + delta)).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert abs(a.sum() - 1.0) <= 1e-9
    assert (a >= 0).all()


def test_softmax_gradient(rng):
    tgt = rng.standard_normal((4, 5))
    z = Tensor(rng.standard_normal((4, 5)))
    assert grad_check(
        lambda t: ((ad.softmax(t, axis=1) - tgt) ** 2).sum(), z) <= 1e-4


# ---- elementwise / batchnorm -------------------------------------------------


def test_relu_values():
    out = ad.relu(Tensor([-1.0, 2.0, 0.0]))
    np.testing.assert_array_equal(out.data, [0.0, 2.0, 0.0])


def test_batchnorm_constant_feature_gives_beta():
    x = Tensor(np.full((4, 3), 5.0))
    gamma = Tensor(np.ones(3))
    beta = Tensor(np.array([1.0, -2.0, 0.5]))
    st_ = BatchNormState.create(3)
    out = ad.batchnorm(x, gamma, beta, st_, training=True)
    np.testing.assert_allclose(out.data, np.tile(beta.data, (4, 1)),
                               atol=1e-12)


def test_batchnorm_batch_of_one_rejected():
    with pytest.raises(ValueError):
        ad.batchnorm(Tensor(np.zeros((1, 3))), Tensor(np.ones(3)),
                     Tensor(np.zeros(3)), BatchNormState.create(3),
                     training=True)


def test_batchnorm_eval_uses_running_stats(rng):
    st_ = BatchNormState.create(2)
    st_.running_mean = np.array([1.0, -1.0])
    st_.running_var = np.array([4.0, 0.25])
    x = rng.standard_normal((3, 2))
    out = ad.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       st_, training=False)
    expected = (x - st_.running_mean) / np.sqrt(st_.running_var + st_.eps)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_batchnorm_gradients(rng):
    tgt = rng.standard_normal((6, 4))
    gamma = Tensor(rng.uniform(0.5, 1.5, 4))
    beta = Tensor(rng.standard_normal(4))

    def loss(t):
        st_ = BatchNormState.create(4)
        return ((ad.batchnorm(t, gamma, beta, st_, training=True)
                 - tgt) ** 2).sum()

    assert grad_check(loss, Tensor(rng.standard_normal((6, 4)))) <= 1e-5


# ---- backward machinery -------------------------------------------------------


def test_sum_gradient_all_ones(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_norm_squared_gradient(rng):
    x = Tensor(rng.standard_normal(7), requires_grad=True)
    (x ** 2).sum().backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data, atol=1e-12)


def test_backward_nonscalar_seed_rejected():
    with pytest.raises(ValueError):
        Tensor(np.zeros(3), requires_grad=True).backward()


def test_shared_node_gradient_accumulates(rng):
    x = Tensor(rng.standard_normal(5), requires_grad=True)
    y = x + x
    (y * y).sum().backward()
    np.testing.assert_allclose(x.grad, 8.0 * x.data, atol=1e-12)


def test_broadcast_add_gradient(rng):
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    x = Tensor(rng.standard_normal((3, 4)))
    ((x + b) ** 2).sum().backward()
    np.testing.assert_allclose(b.grad, (2.0 * (x.data + b.data)).sum(axis=0),
                               atol=1e-12)


def test_concat_and_slice_gradients(rng):
    a = rng.standard_normal((2, 3))
    x = Tensor(rng.standard_normal((2, 3)))
    assert grad_check(
        lambda t: _loss(ad.concat([t, Tensor(a)], axis=0)[1:3]), x) <= 1e-6


def test_no_grad_blocks_graph(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with ad.no_grad():
        y = (x * 2.0).sum()
    assert y._backward is None and y._parents == ()


def test_grad_check_linear_is_tight(rng):
    x = Tensor(rng.standard_normal(6))
    assert grad_check(lambda t: (t * 3.0).sum(), x) <= 1e-10
