"""Tensor engine tests: forward values against direct-loop oracles, backward
against finite differences, RNG determinism, Adam behavior."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlen import tensor as T
from dlen.tensor import Adam, ContractViolation, NonFiniteError, Prng, Tensor


def conv2d_oracle(x, w, b=None, stride=1, padding=0, groups=1):
    """Nested-loop cross-correlation, the slow reference for conv2d."""
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    cog = cout // groups
    for ni in range(n):
        for co in range(cout):
            g = co // cog
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin_g):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (w[co, ci, ki, kj]
                                        * xp[ni, g * cin_g + ci,
                                             i * stride + ki, j * stride + kj])
                    out[ni, co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out


def matmul_oracle(a, b):
    out = np.zeros(a.shape[:-1] + (b.shape[-1],), dtype=a.dtype)
    for idx in np.ndindex(a.shape[:-2]):
        for i in range(a.shape[-2]):
            for j in range(b.shape[-1]):
                acc = 0.0
                for k in range(a.shape[-1]):
                    acc += a[idx + (i, k)] * b[idx + (k, j)]
                out[idx + (i, j)] = acc
    return out


@pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (1, 1, 1),
                                                   (2, 1, 1), (1, 1, 2)])
def test_conv2d_matches_loop_oracle(stride, padding, groups):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 6, 7)).astype(np.float64)
    w = rng.standard_normal((6, 4 // groups, 3, 3)).astype(np.float64)
    b = rng.standard_normal(6).astype(np.float64)
    with T.autocast64():
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b),
                       stride=stride, padding=padding, groups=groups)
    want = conv2d_oracle(x, w, b, stride, padding, groups)
    np.testing.assert_allclose(got.data, want, atol=1e-12)


def test_conv2d_depthwise_matches_loop_oracle():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 5, 8, 8))
    w = rng.standard_normal((5, 1, 3, 3))
    with T.autocast64():
        got = T.conv2d(Tensor(x), Tensor(w), padding=1, groups=5)
    np.testing.assert_allclose(got.data, conv2d_oracle(x, w, padding=1, groups=5),
                               atol=1e-12)


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> must equal <x, conv_transpose(y)> for stride-2 geometry
    rng = np.random.default_rng(5)
    with T.autocast64():
        x = Tensor(rng.standard_normal((1, 3, 8, 8)))
        w = Tensor(rng.standard_normal((4, 3, 2, 2)))
        y = Tensor(rng.standard_normal((1, 4, 4, 4)))
        lhs = float(np.sum(T.conv2d(x, w, stride=2).data * y.data))
        # conv's OIHW weight read as IOHW is exactly the adjoint's weight
        rhs = float(np.sum(x.data * T.conv_transpose2d(y, w, stride=2).data))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 4, 5))
    with T.autocast64():
        got = T.matmul(Tensor(a), Tensor(b)).data
    np.testing.assert_allclose(got, matmul_oracle(a, b), atol=1e-12)


def test_softmax_rows_sum_to_one_and_match_numpy():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((3, 5, 4))
    with T.autocast64():
        s = T.softmax(Tensor(a), axis=-2).data
    np.testing.assert_allclose(s.sum(axis=-2), 1.0, atol=1e-12)
    e = np.exp(a - a.max(axis=-2, keepdims=True))
    np.testing.assert_allclose(s, e / e.sum(axis=-2, keepdims=True), atol=1e-12)


def test_layer_norm_normalizes_last_axis():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 6)) * 3 + 1
    with T.autocast64():
        y = T.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_gelu_reference_values():
    with T.autocast64():
        y = T.gelu(Tensor(np.array([0.0, 1.0, -1.0]))).data
    assert y[0] == 0.0
    assert y[1] == pytest.approx(0.8413447460685429, abs=1e-12)
    # x*Phi(x) satisfies gelu(x) - gelu(-x) = x
    assert y[1] - y[2] == pytest.approx(1.0, abs=1e-12)


def test_broadcasting_restricted_to_same_rank_or_scalar():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((1, 3)))
    assert T.add(a, b).shape == (2, 3)
    assert T.mul(a, 2.0).shape == (2, 3)
    with pytest.raises(ContractViolation):
        T.add(a, Tensor(np.ones(3)))  # rank mismatch


def test_reflect_pad2d_values():
    x = Tensor(np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3))
    y = T.reflect_pad2d(x, (1, 1, 1, 1)).data[0, 0]
    want = np.pad(np.arange(9).reshape(3, 3), 1, mode="reflect")
    np.testing.assert_array_equal(y, want)


def test_backward_matches_finite_differences_on_composite():
    rng = np.random.default_rng(9)
    with T.autocast64():
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)

        def f(t):
            y = T.gelu(T.matmul(t, T.permute(t, (1, 0))))
            return T.reduce_sum(T.mul(y, y))

        f(x).backward()
        fd = T.finite_diff_grad(lambda t: f(t).item(), x, 1e-6)
    np.testing.assert_allclose(x.grad, fd, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=16), st.integers(0, 2 ** 32))
def test_mul_grad_is_other_operand(values, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(np.array(values), requires_grad=True)
    b = Tensor(rng.standard_normal(len(values)), requires_grad=True)
    T.reduce_sum(T.mul(a, b)).backward()
    np.testing.assert_allclose(a.grad, b.data, atol=1e-6)
    np.testing.assert_allclose(b.grad, a.data, atol=1e-6)


def test_grad_accumulates_when_input_reused():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    T.reduce_sum(T.mul(T.add(x, x), x)).backward()  # d/dx 2x^2 = 4x
    np.testing.assert_allclose(x.grad, 4 * x.data, atol=1e-6)


# -- RNG ---------------------------------------------------------------------

def test_prng_is_deterministic_and_platform_stable():
    a = Prng(42).uniform(5)
    b = Prng(42).uniform(5)
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))
    assert not np.array_equal(a, Prng(43).uniform(5))


def test_prng_fork_gives_independent_streams():
    root = Prng(7)
    s1, s2 = root.fork(1), root.fork(2)
    assert s1.seed != s2.seed
    assert not np.array_equal(s1.uniform(8), s2.uniform(8))
    # forking does not advance the parent
    np.testing.assert_array_equal(root.uniform(4), Prng(7).uniform(4))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 62), st.integers(1, 1000))
def test_prng_randint_in_bounds(seed, bound):
    draws = Prng(seed).randint(64, bound)
    assert np.all((draws >= 0) & (draws < bound))


def test_prng_normal_moments():
    z = Prng(1).normal((50_000,), std=2.0, dtype=np.float64)
    assert abs(z.mean()) < 0.05
    assert abs(z.std() - 2.0) < 0.05


# -- Adam --------------------------------------------------------------------

def test_adam_zero_lr_leaves_parameters_unchanged():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    before = p.data.copy()
    opt = Adam({"p": p}, lr=0.0)
    p.grad = np.array([0.3, -0.7], dtype=p.data.dtype)
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_equals_lr_times_sign():
    # with bias correction, step 1 moves by lr * g / (|g| + eps) ~= lr * sign(g)
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True, dtype=np.float64)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.array([0.5, -0.25])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)


def test_finite_diff_rejects_nonpositive_step():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(ContractViolation):
        T.finite_diff_grad(lambda t: t.item(), x, 0.0)
