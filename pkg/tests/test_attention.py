import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smat import autodiff as ad
from smat.attention import (
    Fusion,
    FusionVariant,
    SeparableAttention,
    StandardAttention,
    fusion_forward,
    fusion_multiply_count,
    mixed_attention_forward,
    separable_core,
    separable_cross_attention_forward,
    separable_layer_forward,
    standard_attention_forward,
)
from smat.autodiff import ShapeError, Tensor, grad_check


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def naive_separable(q, k, v):
    """Scalar loops over the two defining formulas."""
    n, d = k.shape
    m = max(q[i, 0] for i in range(n))
    e = [np.exp(q[i, 0] - m) for i in range(n)]
    z = sum(e)
    a = [sum(e[i] / z * k[i, j] for i in range(n)) for j in range(d)]
    return np.array([[a[j] * max(v[i, j], 0.0) for j in range(d)] for i in range(n)]), np.array(a)


def zero_weights(module):
    for name, p in module.named_parameters():
        if not name.startswith("norm"):
            p.data = np.zeros_like(p.data)
    return module


class TestSeparableCore:
    def test_hand_example(self):
        m, tr = separable_core(t64([[0], [0]]), t64([[1, 2], [3, 4]]), t64([[1, -1], [2, 2]]))
        np.testing.assert_allclose(tr.A, [[2, 3]])
        np.testing.assert_allclose(m.data, [[2, 0], [4, 6]])

    def test_nonpositive_values_annihilate(self, rng):
        m, _ = separable_core(t64(rng.standard_normal((5, 1))), t64(rng.standard_normal((5, 3))),
                              t64(-np.abs(rng.standard_normal((5, 3)))))
        assert not m.data.any()

    def test_single_token(self, rng):
        k, v = rng.standard_normal((1, 4)), rng.standard_normal((1, 4))
        m, tr = separable_core(t64([[3.7]]), t64(k), t64(v))
        np.testing.assert_allclose(tr.Q_soft, [[1.0]])
        np.testing.assert_allclose(tr.A, k)
        np.testing.assert_allclose(m.data, k * np.maximum(v, 0))

    def test_trace_invariants(self, rng):
        q, k, v = rng.standard_normal((6, 1)), rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
        m, tr = separable_core(t64(q), t64(k), t64(v))
        assert tr.Q_soft.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(tr.A, (tr.Q_soft * k).sum(0, keepdims=True), atol=1e-15)
        np.testing.assert_array_equal(tr.M, tr.A * np.maximum(v, 0))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            separable_core(t64(np.zeros((3, 1))), t64(np.zeros((4, 2))), t64(np.zeros((4, 2))))
        with pytest.raises(ShapeError):
            separable_core(t64(np.zeros((3, 2))), t64(np.zeros((3, 2))), t64(np.zeros((3, 2))))

    @pytest.mark.parametrize("k,d", [(1, 1), (4, 3), (16, 8), (320, 48)])
    def test_multiply_count_is_linear(self, k, d, rng):
        q, kk, v = t64(rng.standard_normal((k, 1))), t64(rng.standard_normal((k, d))), t64(rng.standard_normal((k, d)))
        with ad.count_multiplies() as c:
            separable_core(q, kk, v)
        assert c.total == 2 * k * d + d

    def test_oracle_on_seeded_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            k, d = rng.integers(1, 9, size=2)
            q, kk, v = rng.standard_normal((k, 1)), rng.standard_normal((k, d)), rng.standard_normal((k, d))
            m, tr = separable_core(t64(q), t64(kk), t64(v))
            ref_m, ref_a = naive_separable(q, kk, v)
            np.testing.assert_allclose(m.data, ref_m, rtol=0, atol=1e-12)
            np.testing.assert_allclose(tr.A[0], ref_a, rtol=0, atol=1e-12)


class TestSeparableLayer:
    def test_zero_weights_are_identity(self, rng):
        layer = zero_weights(SeparableAttention(5, 0))
        x = Tensor(rng.standard_normal((7, 5)).astype(np.float32))
        np.testing.assert_array_equal(separable_layer_forward(x, layer).data, x.data)

    def test_gradient(self, rng):
        layer = SeparableAttention(3, 0).to(np.float64)
        for p in layer.parameters():
            if not np.any(p.data):
                p.data = rng.uniform(-0.3, 0.3, p.shape)
        x = t64(rng.standard_normal((4, 3)))
        proj = rng.standard_normal((4, 3))
        f = lambda t: (layer(t) * proj).sum()  # noqa: E731
        assert grad_check(f, x, skip_kinks=True) < 1e-4
        assert grad_check(f, x, wrt=layer.parameters(), skip_kinks=True) < 1e-4

    def test_query_has_width_one(self):
        layer = SeparableAttention(6, 0)
        assert layer.w_q.weight.shape == (6, 1)
        assert layer.w_k.weight.shape == layer.w_v.weight.shape == (6, 6)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            SeparableAttention(4, 0)(t64(np.zeros((3, 5))))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 12))
    def test_permutation_equivariance(self, seed, k):
        rng = np.random.default_rng(seed)
        layer = SeparableAttention(4, seed).to(np.float64)
        x = rng.standard_normal((k, 4))
        perm = rng.permutation(k)
        # the pooled sum is order independent up to float64 summation rounding
        np.testing.assert_allclose(layer(t64(x[perm])).data, layer(t64(x)).data[perm], rtol=0, atol=1e-12)


class TestMixedAttention:
    def test_default_token_count(self, rng):
        layer = SeparableAttention(8, 0)
        traces = []
        z, x = mixed_attention_forward(Tensor(rng.standard_normal((64, 8))), Tensor(rng.standard_normal((256, 8))),
                                       layer, traces)
        assert traces[0].K.shape[0] == 8 * 8 + 16 * 16 == 320
        assert z.shape == (64, 8) and x.shape == (256, 8)

    def test_equal_inputs_give_equal_halves(self, rng):
        t = t64(rng.standard_normal((9, 4)))
        z, x = mixed_attention_forward(t, t, SeparableAttention(4, 1).to(np.float64))
        np.testing.assert_array_equal(z.data, x.data)

    def test_template_token_reaches_every_output(self, rng):
        layer = SeparableAttention(4, 2).to(np.float64)
        z, x = rng.standard_normal((4, 4)), rng.standard_normal((6, 4))
        base = np.concatenate([o.data for o in mixed_attention_forward(t64(z), t64(x), layer)])
        z[1, 2] += 0.5  # a uniform shift would vanish under the norm
        moved = np.concatenate([o.data for o in mixed_attention_forward(t64(z), t64(x), layer)])
        assert np.all(np.abs(moved - base).max(axis=1) > 1e-9)

    def test_equals_self_attention_on_concatenation(self, rng):
        layer = SeparableAttention(4, 3).to(np.float64)
        z, x = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
        zo, xo = mixed_attention_forward(t64(z), t64(x), layer)
        full = layer(t64(np.concatenate([z, x]))).data
        np.testing.assert_array_equal(np.concatenate([zo.data, xo.data]), full)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            mixed_attention_forward(t64(np.zeros((2, 3))), t64(np.zeros((2, 4))), SeparableAttention(3, 0))


class TestCrossAttention:
    def test_zero_context(self, rng):
        layer = SeparableAttention(3, 0).to(np.float64)
        layer.w_k.bias.data[:] = 0
        q = t64(rng.standard_normal((4, 3)))
        out = separable_cross_attention_forward(q, t64(np.zeros((5, 3))), layer).data
        np.testing.assert_allclose(out, q.data + layer.ffn_out(q).data, atol=1e-14)

    def test_query_permutation(self, rng):
        layer = SeparableAttention(3, 1).to(np.float64)
        q, kv = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
        perm = rng.permutation(5)
        a = separable_cross_attention_forward(t64(q[perm]), t64(kv), layer).data
        b = separable_cross_attention_forward(t64(q), t64(kv), layer).data[perm]
        np.testing.assert_array_equal(a, b)

    def test_scalar_oracle(self):
        # d = 2, identity projections, no biases, unit norm affine
        layer = SeparableAttention(2, 0).to(np.float64)
        layer.w_q.weight.data = np.array([[1.0], [0.0]])
        layer.w_k.weight.data = np.eye(2)
        layer.w_v.weight.data = np.eye(2)
        layer.ffn_out.weight.data = np.zeros((2, 2))
        for lin in (layer.w_k, layer.w_v, layer.ffn_out):
            lin.bias.data = np.zeros(2)
        kv = np.array([[3.0, 1.0]])
        q = np.array([[1.0, 2.0], [5.0, -1.0]])
        # a two-feature token normalises to (+-1, -+1): kv -> (1, -1); q rows -> (-1, 1), (1, -1)
        a = np.array([1.0, -1.0])
        v = np.array([[-1.0, 1.0], [1.0, -1.0]])
        expected = q + a * np.maximum(v, 0)  # [[1, 1], [6, -1]]
        out = separable_cross_attention_forward(t64(q), t64(kv), layer).data
        np.testing.assert_allclose(out, expected, atol=1e-4)
        np.testing.assert_allclose(expected, [[1.0, 1.0], [6.0, -1.0]])


class TestStandardAttention:
    def test_single_token_returns_value(self, rng):
        layer = StandardAttention(3, 0).to(np.float64)
        traces = []
        layer(t64(rng.standard_normal((1, 3))), traces)
        np.testing.assert_allclose(traces[0].M, traces[0].V)

    def test_identical_keys_average_values(self, rng):
        layer = StandardAttention(3, 0).to(np.float64)
        traces = []
        layer(t64(np.tile(rng.standard_normal((1, 3)), (5, 1))), traces)
        # identical tokens give identical keys (and values); perturb V via the trace check
        q, k, v = rng.standard_normal((4, 3)), np.tile(rng.standard_normal((1, 3)), (4, 1)), rng.standard_normal((4, 3))
        out = layer._attend(t64(q), t64(k), t64(v), None).data
        np.testing.assert_allclose(out, np.tile(v.mean(0), (4, 1)), atol=1e-14)

    def test_hand_softmax(self):
        layer = StandardAttention(1, 0).to(np.float64)
        out = layer._attend(t64([[0.0], [0.0]]), t64([[0.0], [0.0]]), t64([[2.0], [4.0]]), None)
        np.testing.assert_allclose(out.data, [[3.0], [3.0]])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 20))
    def test_rows_are_stochastic(self, seed, k):
        rng = np.random.default_rng(seed)
        traces = []
        StandardAttention(4, seed)(Tensor(rng.standard_normal((k, 4))), traces)
        np.testing.assert_allclose(traces[0].A.sum(-1), 1.0, atol=1e-6)
        assert traces[0].Q_soft.sum() == pytest.approx(1.0, abs=1e-5)

    def test_wrapper_and_width_check(self, rng):
        layer = StandardAttention(3, 0)
        x = Tensor(rng.standard_normal((4, 3)))
        np.testing.assert_array_equal(standard_attention_forward(x, layer).data, layer(x).data)
        with pytest.raises(ShapeError):
            layer(Tensor(np.zeros((4, 2))))

    def test_gradient(self, rng):
        layer = StandardAttention(3, 0).to(np.float64)
        x = t64(rng.standard_normal((4, 3)))
        proj = rng.standard_normal((4, 3))
        f = lambda t: (layer(t) * proj).sum()  # noqa: E731
        assert grad_check(f, x) < 1e-4
        assert grad_check(f, x, wrt=layer.parameters()) < 1e-4


class TestFusion:
    def test_variant_a_has_no_cross_path(self, rng):
        fusion = Fusion("A", 4, rng=0)
        x = Tensor(rng.standard_normal((6, 4)))
        _, x1 = fusion(Tensor(rng.standard_normal((3, 4))), x)
        _, x2 = fusion(Tensor(rng.standard_normal((3, 4))), x)
        _, x3 = fusion(None, x)
        np.testing.assert_array_equal(x1.data, x2.data)
        np.testing.assert_array_equal(x1.data, x3.data)

    @pytest.mark.parametrize("variant", ["B", "C", "D"])
    def test_other_variants_couple_streams(self, rng, variant):
        fusion = Fusion(variant, 4, rng=0)
        x = Tensor(rng.standard_normal((6, 4)))
        _, x1 = fusion(Tensor(rng.standard_normal((3, 4))), x)
        _, x2 = fusion(Tensor(rng.standard_normal((3, 4))), x)
        assert not np.array_equal(x1.data, x2.data)

    def test_variant_d_is_mixed_attention(self, rng):
        fusion = Fusion("D", 4, rng=0)
        z, x = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((5, 4)))
        a = fusion_forward("D", z, x, fusion)
        b = mixed_attention_forward(z, x, fusion.self_attn)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u.data, v.data)

    def test_variant_b_shares_weights(self):
        fusion = Fusion("B", 4, rng=0)
        assert fusion.self_attn is None and fusion.cross_attn is not None

    def test_default_is_d(self):
        from smat.model import ModelConfig

        assert ModelConfig().variant == FusionVariant.D.value

    def test_multiply_count_ranking(self):
        counts = {v: fusion_multiply_count(v, 64, 256, 48) for v in "ABCD"}
        assert counts["A"] < counts["D"] < counts["B"] < counts["C"]

    def test_wrong_variant_rejected(self, rng):
        with pytest.raises(ValueError):
            fusion_forward("B", Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), Fusion("D", 4, rng=0))

    def test_search_query_trace(self, rng):
        for variant in "ABCD":
            traces = []
            Fusion(variant, 4, rng=0)(Tensor(rng.standard_normal((4, 4))), Tensor(rng.standard_normal((9, 4))), traces)
            sq = traces[0].search_query
            assert sq.shape == (9,), variant
