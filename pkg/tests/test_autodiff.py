import zlib

import numpy as np
import pytest

from activeloc import autodiff as ad
from gradcases import cases, gradcheck_case


@pytest.mark.parametrize("name", sorted(cases()))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        assert gradcheck_case(name, rng) < 1e-4


def test_softmax_symmetric():
    np.testing.assert_array_equal(ad.softmax(np.zeros((1, 2))).data, [[0.5, 0.5]])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    s = ad.softmax(rng.normal(scale=20, size=(50, 7))).data
    assert np.all(s > 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_gaussian_log_prob_standard():
    lp = ad.gaussian_log_prob(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1))).data
    assert lp[0] == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)
    lp2 = ad.gaussian_log_prob(np.ones((1, 2)), np.zeros(2), np.ones((1, 2))).data
    assert lp2[0] == pytest.approx(-np.log(2 * np.pi), abs=1e-12)


def test_tanh_derivative_at_zero():
    x = ad.Tensor(np.zeros(1), requires_grad=True)
    ad.backward(ad.reduce_sum(ad.tanh(x)))
    assert x.grad[0] == 1.0


def test_sum_of_squares_gradient():
    x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.reduce_sum(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_independent_leaf_gets_no_gradient():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.Tensor([3.0, 4.0], requires_grad=True)
    ad.backward(ad.reduce_sum(ad.exp(x)))
    assert y.grad is None
    assert ad.analytic_grad(lambda a, b: ad.reduce_sum(a), [np.ones(2), np.ones(2)])[1].tolist() == [0, 0]


def test_chain_rule_matches_finite_differences():
    rng = np.random.default_rng(5)
    f = lambda x: ad.reduce_sum(ad.log(ad.add(ad.exp(ad.tanh(ad.mul(x, x))), 1.0)))
    for _ in range(20):
        assert ad.gradcheck(f, [rng.normal(size=5)]) < 1e-5


def test_backward_twice_is_an_error():
    x = ad.Tensor([1.0], requires_grad=True)
    loss = ad.reduce_sum(ad.mul(x, x))
    ad.backward(loss)
    with pytest.raises(RuntimeError):
        ad.backward(loss)


def test_backward_requires_scalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.mul(x, 2.0))


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\) vs \(3, 2\)"):
        ad.add(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ad.ShapeError):
        ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_shared_subexpression_accumulates():
    x = ad.Tensor([3.0], requires_grad=True)
    y = ad.mul(x, 2.0)
    ad.backward(ad.reduce_sum(ad.add(ad.mul(y, y), y)))
    # d/dx (4x^2 + 2x) = 8x + 2
    assert x.grad[0] == pytest.approx(26.0)


def test_no_grad_records_nothing():
    x = ad.Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = ad.tanh(x)
    assert not y.requires_grad


def naive_conv(x, w, b, pad):
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if pad == "same":
        x = np.pad(x, ((0, 0), (0, 0), ((kh - 1) // 2, kh // 2), ((kw - 1) // 2, kw // 2)))
    Ho, Wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    out[n, o, i, j] = b[o] + sum(
                        x[n, c, i + a, j + d] * w[o, c, a, d]
                        for c in range(C) for a in range(kh) for d in range(kw))
    return out


@pytest.mark.parametrize("pad", ["valid", "same"])
def test_conv2d_matches_naive_loops_exactly(pad):
    rng = np.random.default_rng(2)
    x = rng.integers(-5, 6, size=(2, 3, 6, 5)).astype(float)
    w = rng.integers(-3, 4, size=(4, 3, 3, 3)).astype(float)
    b = rng.integers(-2, 3, size=4).astype(float)
    np.testing.assert_array_equal(ad.conv2d(x, w, b, pad).data, naive_conv(x, w, b, pad))


def test_deterministic_outputs():
    rng = np.random.default_rng(4)
    x, w, b = rng.normal(size=(2, 2, 7, 7)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    a1 = ad.conv2d(x, w, b).data
    a2 = ad.conv2d(x, w, b).data
    assert a1.tobytes() == a2.tobytes()


def test_gather_rows_out_of_range():
    with pytest.raises(IndexError):
        ad.gather_rows(np.zeros((2, 2)), [2])
