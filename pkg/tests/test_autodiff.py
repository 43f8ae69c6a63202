import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smat import autodiff as ad
from smat.autodiff import ContractError, ShapeError, Tensor, backward, grad_check


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        b = [[5.0, 6.0], [7.0, 8.0]]
        np.testing.assert_array_equal(ad.matmul(t64(np.eye(2)), t64(b)).data, b)

    def test_hand_oracle(self):
        out = ad.matmul(t64([[1, 2], [3, 4]]), t64([[1], [1]]))
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_zero_matrix_gives_zero_grad(self):
        a = t64(np.arange(6.0).reshape(2, 3), grad=True)
        out = ad.matmul(a, t64(np.zeros((3, 4))))
        assert not out.data.any()
        backward(out.sum())
        assert not a.grad.any()

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(t64(np.zeros((2, 3))), t64(np.zeros((4, 5))))

    def test_gradient_rule(self, rng):
        a = t64(rng.standard_normal((3, 4)), grad=True)
        b = t64(rng.standard_normal((4, 2)), grad=True)
        backward(ad.matmul(a, b).sum())
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(ad.softmax(t64([1.0, 1.0]), 0).data, [0.5, 0.5])

    def test_log3(self):
        np.testing.assert_allclose(ad.softmax(t64([0.0, np.log(3.0)]), 0).data, [0.25, 0.75], atol=1e-15)

    def test_no_overflow(self):
        out = ad.softmax(Tensor(np.array([1000.0, 1000.0], dtype=np.float32)), 0)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_bad_axis(self):
        with pytest.raises(ContractError):
            ad.softmax(t64([1.0, 2.0]), axis=3)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-1e3, 1e3))
    def test_shift_invariance(self, seed, c):
        x = np.random.default_rng(seed).standard_normal((3, 5)) * 5
        a = ad.softmax(t64(x), -1).data
        b = ad.softmax(t64(x + c), -1).data
        np.testing.assert_allclose(a, b, atol=1e-6)
        np.testing.assert_allclose(a.sum(-1), 1.0)
        assert np.all(a > 0)


class TestRelu:
    def test_forward(self):
        np.testing.assert_array_equal(ad.relu(t64([-1, 0, 2])).data, [0, 0, 2])

    def test_backward_indicator(self):
        x = t64([-1, 0, 2], grad=True)
        backward(ad.relu(x).sum())
        np.testing.assert_array_equal(x.grad, [0, 0, 1])

    def test_identity_on_nonnegative(self, rng):
        x = np.abs(rng.standard_normal(10))
        np.testing.assert_array_equal(ad.relu(t64(x)).data, x)


def naive_conv(x, w, stride, pad, groups=1):
    """Direct loop over output pixels; reference for conv2d."""
    h, wd, cin = x.shape
    kh, kw, cg, cout = w.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    per_group = cout // groups
    for i in range(ho):
        for j in range(wo):
            patch = xp[i * stride : i * stride + kh, j * stride : j * stride + kw]
            for o in range(cout):
                g = o // per_group
                out[i, j, o] = np.sum(patch[:, :, g * cg : (g + 1) * cg] * w[:, :, :, o])
    return out


class TestConv2d:
    def test_unit_kernel_identity(self, rng):
        x = rng.standard_normal((5, 5, 1))
        out = ad.conv2d(t64(x), t64(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    def test_shape_formula(self):
        out = ad.conv2d(t64(np.zeros((8, 8, 1))), t64(np.zeros((3, 3, 1, 1))), stride=2, padding=1)
        assert out.shape == (4, 4, 1)

    def test_averaging_kernel(self):
        out = ad.conv2d(t64(np.full((6, 6, 1), 3.0)), t64(np.full((3, 3, 1, 1), 1 / 9)), padding=1)
        np.testing.assert_allclose(out.data[1:-1, 1:-1, 0], 3.0)

    @pytest.mark.parametrize("stride,pad,groups,cin,cout", [(1, 1, 1, 3, 4), (2, 1, 1, 2, 3), (1, 1, 4, 4, 4), (2, 0, 2, 4, 6)])
    def test_matches_naive(self, rng, stride, pad, groups, cin, cout):
        x = rng.standard_normal((7, 6, cin))
        w = rng.standard_normal((3, 3, cin // groups, cout))
        out = ad.conv2d(t64(x), t64(w), stride, pad, groups)
        np.testing.assert_allclose(out.data, naive_conv(x, w, stride, pad, groups), atol=1e-12)

    def test_batched(self, rng):
        x = rng.standard_normal((2, 5, 5, 3))
        w = rng.standard_normal((3, 3, 3, 2))
        out = ad.conv2d(t64(x), t64(w), 1, 1)
        for i in range(2):
            np.testing.assert_allclose(out.data[i], naive_conv(x[i], w, 1, 1), atol=1e-12)

    def test_invalid_groups(self):
        with pytest.raises(ShapeError):
            ad.conv2d(t64(np.zeros((4, 4, 3))), t64(np.zeros((3, 3, 1, 2))), groups=2)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            ad.conv2d(t64(np.zeros((2, 2, 1))), t64(np.zeros((5, 5, 1, 1))))


class TestBackward:
    def test_square_sum(self, rng):
        x = t64(rng.standard_normal(5), grad=True)
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_relu_sum(self):
        x = t64([-1.0, 2.0], grad=True)
        backward(ad.relu(x).sum())
        np.testing.assert_array_equal(x.grad, [0, 1])

    def test_matmul_sum(self, rng):
        a = t64(rng.standard_normal((2, 3)), grad=True)
        b = t64(rng.standard_normal((3, 4)))
        backward(ad.matmul(a, b).sum())
        np.testing.assert_allclose(a.grad, np.ones((2, 4)) @ b.data.T)

    def test_non_scalar_root(self):
        with pytest.raises(ContractError):
            backward(t64([1.0, 2.0], grad=True) * 2.0)

    def test_accumulates_shared_leaf(self, rng):
        # f(x) = sum(x * x) + sum(3 x) uses x on two paths; df/dx = 2x + 3
        x = t64(rng.standard_normal(4), grad=True)
        backward((x * x).sum() + (x * 3.0).sum())
        np.testing.assert_allclose(x.grad, 2 * x.data + 3)

    def test_same_tensor_both_operands(self, rng):
        x = t64(rng.standard_normal((3, 3)), grad=True)
        backward(ad.matmul(x, x).sum())
        ones = np.ones((3, 3))
        np.testing.assert_allclose(x.grad, ones @ x.data.T + x.data.T @ ones)

    def test_no_grad_records_nothing(self):
        x = t64([1.0], grad=True)
        with ad.no_grad():
            y = x * 2.0
        assert not y.requires_grad


class TestGradCheck:
    def test_linear_function_exact(self, rng):
        w = rng.standard_normal(6)
        x = t64(rng.standard_normal(6))
        # central differences are exact for linear f, only roundoff (~1/eps) remains
        assert grad_check(lambda t: (t * w).sum(), x, eps=1e-3) < 1e-10

    def test_detects_wrong_gradient(self, rng):
        def bad(t):
            out = ad._make(t.data ** 2, (t,), lambda g: (g * t.data,))  # true derivative is 2x
            return out.sum()

        assert grad_check(bad, t64(rng.uniform(1, 2, 4))) > 0.1

    def test_skip_kinks_only_skips(self):
        x = t64([0.0, 1.0, -1.0])
        stats = ad.GradCheckStats()
        err = grad_check(lambda t: ad.relu(t).sum(), x, skip_kinks=True, stats=stats)
        assert err < 1e-10
        assert stats.skipped == 1 and stats.probed == 2


UNARY = {
    "exp": lambda t: ad.exp(t),
    "log": lambda t: ad.log(ad.abs_(t) + 0.5),
    "sqrt": lambda t: ad.sqrt(t * t + 1.0),
    "sigmoid": ad.sigmoid,
    "relu": ad.relu,
    "power": lambda t: ad.power(t * t + 1.0, 1.5),
    "softmax": lambda t: ad.softmax(t, -1),
    "sum_axis": lambda t: t.sum(axis=0),
    "mean_axis": lambda t: t.mean(axis=1, keepdims=True),
    "transpose": lambda t: ad.transpose(t),
    "reshape": lambda t: ad.reshape(t, (-1,)),
    "getitem": lambda t: t[1:, ::2],
    "fancy_index": lambda t: t[np.array([0, 2, 0]), np.array([1, 1, 3])],
    "clip": lambda t: ad.clip(t, -0.5, 0.5),
    "layer_norm": lambda t: ad.layer_norm(t, Tensor(np.linspace(0.5, 1.5, 4)), Tensor(np.linspace(-1, 1, 4))),
}

BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "broadcast_mul": lambda a, b: a * b[0:1],
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
    "maximum": ad.maximum,
    "minimum": ad.minimum,
    "concat": lambda a, b: ad.concat([a, b], axis=0),
    "split": lambda a, b: ad.split(ad.concat([a, b], axis=1), 3, axis=1)[1],
    "conv2d": lambda a, b: ad.conv2d(ad.reshape(a, (3, 4, 1)), ad.reshape(b[:2, :2], (2, 2, 1, 1)), padding=1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_unary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    x = t64(rng.standard_normal((3, 4)))
    proj = rng.standard_normal(UNARY[name](x).shape)
    err = grad_check(lambda t: (UNARY[name](t) * proj).sum(), x, skip_kinks=True)
    assert err < 1e-4


@pytest.mark.parametrize("name", sorted(BINARY))
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_binary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    a = t64(rng.standard_normal((3, 4)))
    b = t64(rng.standard_normal((3, 4)))
    proj = rng.standard_normal(BINARY[name](a, b).shape)
    f = lambda _: (BINARY[name](a, b) * proj).sum()  # noqa: E731
    assert grad_check(f, a, wrt=[a, b], skip_kinks=True) < 1e-4


@settings(max_examples=60, deadline=None)
@given(
    m=st.integers(1, 5), n=st.integers(1, 5), p=st.integers(1, 5), batch=st.integers(0, 2),
)
def test_matmul_shape_algebra(m, n, p, batch):
    lead = (2,) * batch
    out = ad.matmul(t64(np.zeros(lead + (m, n))), t64(np.zeros((n, p))))
    assert out.shape == lead + (m, p)


@settings(max_examples=60, deadline=None)
@given(
    h=st.integers(3, 12), w=st.integers(3, 12), k=st.sampled_from([1, 3, 5]),
    stride=st.integers(1, 3), pad=st.integers(0, 2),
)
def test_conv_shape_algebra(h, w, k, stride, pad):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    out = ad.conv2d(t64(np.zeros((h, w, 2))), t64(np.zeros((k, k, 2, 3))), stride, pad)
    assert out.shape == ((h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1, 3)


def test_tensor_invariants(rng):
    x = Tensor(rng.standard_normal((2, 3)).tolist(), requires_grad=True)
    assert x.size == int(np.prod(x.shape))
    assert x.dtype == np.float32
    backward((x * x).sum())
    assert x.grad.shape == x.shape


def test_multiply_counter_counts_matmul():
    with ad.count_multiplies() as c:
        ad.matmul(t64(np.ones((2, 3))), t64(np.ones((3, 4))))
    assert c.total == 2 * 3 * 4
