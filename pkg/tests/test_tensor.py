import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sefish import DataError, DimensionError, GradTape, Tensor
from sefish import tensor as T


class TestTensorBasics:
    def test_shape_matches_data_length(self):
        t = Tensor(np.arange(12.0).reshape(3, 4))
        assert t.shape == (3, 4)
        assert t.size == 12

    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_arrays_keep_their_dtype(self):
        assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64

    def test_grad_populated_with_matching_shape(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        out = T.sum_all(T.multiply(x, x))
        out.backward()
        assert x.grad is not None
        assert x.grad.shape == x.data.shape

    def test_backward_requires_scalar_without_explicit_grad(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        out = T.multiply(x, x)
        with pytest.raises(DimensionError):
            out.backward()


class TestGradTape:
    def test_trace_is_topologically_ordered(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 2)), requires_grad=True)
        c = T.add(a, b)
        d = T.multiply(c, a)  # diamond: a feeds both c and d
        e = T.sum_all(d)
        tape = GradTape.trace(e)
        pos = {id(t): i for i, t in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                if parent.requires_grad:
                    assert pos[id(parent)] < pos[id(node)]

    def test_each_node_appears_once(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = T.add(a, a)
        c = T.multiply(b, b)
        tape = GradTape.trace(T.sum_all(c))
        ids = [id(t) for t in tape.nodes]
        assert len(ids) == len(set(ids))

    def test_shared_subexpression_accumulates_both_paths(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        out = T.sum_all(T.add(T.multiply(a, a), a))  # d/da (a^2 + a) = 2a + 1
        out.backward()
        assert np.allclose(a.grad, [5.0])


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor(np.array([[3.0, 4.0], [5.0, 6.0]]))
        assert np.array_equal(T.matmul(eye, m).data, m.data)

    def test_hand_arithmetic(self):
        out = T.matmul(Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[3.0], [4.0]])))
        assert np.array_equal(out.data, [[11.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv2d:
    def test_full_scale_output_shape(self):
        x = Tensor(np.zeros((1, 200, 200, 3), dtype=np.float32))
        k = Tensor(np.zeros((5, 5, 3, 32), dtype=np.float32))
        assert T.conv2d(x, k).shape == (1, 196, 196, 32)

    def test_all_ones_hand_case(self):
        x = Tensor(np.ones((1, 3, 3, 1)))
        k = Tensor(np.ones((2, 2, 1, 1)))
        out = T.conv2d(x, k)
        assert out.shape == (1, 2, 2, 1)
        assert np.array_equal(out.data, np.full((1, 2, 2, 1), 4.0))

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError, match="larger than input"):
            T.conv2d(Tensor(np.ones((1, 2, 2, 1))), Tensor(np.ones((3, 3, 1, 1))))

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 1, 1))))


class TestMaxPool:
    def test_full_scale_output_shape(self):
        x = Tensor(np.zeros((1, 196, 196, 32), dtype=np.float32))
        assert T.maxpool2d(x).shape == (1, 98, 98, 32)

    def test_single_window_maximum(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
        assert T.maxpool2d(x).data.item() == 4.0

    def test_odd_extents_floor(self):
        x = Tensor(np.zeros((1, 5, 7, 2)))
        assert T.maxpool2d(x).shape == (1, 2, 3, 2)

    def test_backward_routes_to_first_argmax_on_ties(self):
        x = Tensor(np.full((1, 2, 2, 1), 3.0), requires_grad=True)
        out = T.maxpool2d(x)
        out.backward(np.ones_like(out.data))
        # all four tie; row-major first cell wins
        assert np.array_equal(x.grad.reshape(2, 2), [[1.0, 0.0], [0.0, 0.0]])

    def test_too_small_input(self):
        with pytest.raises(DimensionError):
            T.maxpool2d(Tensor(np.zeros((1, 1, 4, 1))))


class TestGlobalAvgPool:
    def test_constant_channel(self):
        x = Tensor(np.full((1, 3, 5, 2), 7.0))
        assert np.allclose(T.global_avg_pool(x).data, 7.0)

    def test_hand_arithmetic(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2, 1))
        assert T.global_avg_pool(x).data.item() == pytest.approx(2.5)

    @given(st.floats(min_value=-10, max_value=10, allow_nan=False))
    @settings(max_examples=25, deadline=None)
    def test_linearity_in_scale(self, alpha):
        rng = np.random.default_rng(11)
        x = rng.random((2, 3, 4, 3))
        base = T.global_avg_pool(Tensor(x)).data
        scaled = T.global_avg_pool(Tensor(alpha * x)).data
        assert np.allclose(scaled, alpha * base, atol=1e-6)


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        out = T.softmax(Tensor(np.zeros((1, 4))))
        assert np.allclose(out.data, 0.25)

    @given(st.lists(st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=2, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_simplex_property(self, logits):
        out = T.softmax(Tensor(np.array([logits], dtype=np.float64))).data
        assert np.all(out > 0.0)
        assert np.all(out < 1.0 + 1e-12)
        assert abs(out.sum() - 1.0) < 1e-6

    def test_stable_under_large_logits(self):
        out = T.softmax(Tensor(np.array([[1000.0, 0.0]], dtype=np.float32))).data
        assert np.isfinite(out).all()
        assert out[0, 0] == pytest.approx(1.0)


class TestCrossEntropy:
    def test_perfect_prediction_is_zero(self):
        probs = Tensor(np.array([[0.0, 1.0, 0.0]]))
        target = np.array([[0.0, 1.0, 0.0]], dtype=np.float32)
        assert float(T.cross_entropy(probs, target).data) == 0.0

    def test_uniform_over_four_classes_is_ln4(self):
        probs = Tensor(np.full((2, 4), 0.25))
        target = T.one_hot(np.array([0, 3]), 4)
        assert float(T.cross_entropy(probs, target).data) == pytest.approx(math.log(4.0), rel=1e-6)

    def test_rejects_unnormalized_rows(self):
        with pytest.raises(DataError, match="normalized"):
            T.cross_entropy(Tensor(np.array([[0.5, 0.9]])), np.array([[1.0, 0.0]], dtype=np.float32))

    def test_non_negative(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(6, 5))
        probs = T.softmax(Tensor(logits))
        target = T.one_hot(rng.integers(0, 5, 6), 5)
        assert float(T.cross_entropy(probs, target).data) >= 0.0

    def test_strictly_positive_unless_perfect(self):
        probs = Tensor(np.array([[0.9, 0.1], [0.2, 0.8]]))
        target = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        assert float(T.cross_entropy(probs, target).data) > 0.0

    def test_one_hot_rejects_out_of_range(self):
        with pytest.raises(DataError, match="position 1"):
            T.one_hot(np.array([0, 7, 1]), 4)


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert T.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x

    def test_inference_mode_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert T.dropout(x, 0.5, training=False) is x

    def test_training_applies_inverted_scaling(self):
        x = Tensor(np.ones((100, 100)))
        out = T.dropout(x, 0.25, training=True, rng=np.random.default_rng(0)).data
        kept = out[out != 0]
        assert np.allclose(kept, 1.0 / 0.75)
        # keep fraction should be near 75%
        assert 0.70 < kept.size / out.size < 0.80

    def test_same_rng_state_reproduces_mask(self):
        x = Tensor(np.ones((10, 10)))
        a = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(42)).data
        b = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(42)).data
        assert np.array_equal(a, b)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            T.dropout(Tensor(np.ones(2)), 1.0, training=True, rng=np.random.default_rng(0))


class TestBatchNorm:
    def test_two_point_batch_normalizes_exactly(self):
        # oracle: direct computation (x - mean) / sqrt(var + eps) with gamma=1, beta=0
        eps = 1e-12
        x = np.array([[-1.0], [1.0]], dtype=np.float64)
        gamma = Tensor(np.ones(1, dtype=np.float64), requires_grad=True)
        beta = Tensor(np.zeros(1, dtype=np.float64), requires_grad=True)
        out = T.batch_norm(Tensor(x), gamma, beta, training=True, eps=eps).data
        expected = (x - x.mean(axis=0)) / np.sqrt(x.var(axis=0) + eps)
        assert np.allclose(out, expected, atol=1e-12)
        assert abs(out.mean()) < 1e-6
        assert abs(out.var() - 1.0) < 1e-6

    def test_training_mean_zero_default_eps(self):
        rng = np.random.default_rng(3)
        x = rng.normal(2.0, 3.0, size=(16, 5)).astype(np.float32)
        out = T.batch_norm(
            Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5)), training=True
        ).data
        assert np.abs(out.mean(axis=0)).max() < 1e-5

    def test_running_statistics_update(self):
        rng = np.random.default_rng(4)
        x = rng.normal(5.0, 2.0, size=(32, 3)).astype(np.float32)
        rm = np.zeros(3, dtype=np.float32)
        rv = np.ones(3, dtype=np.float32)
        T.batch_norm(
            Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
            training=True, running_mean=rm, running_var=rv, momentum=0.9,
        )
        assert np.allclose(rm, 0.1 * x.mean(axis=0), rtol=1e-5)
        assert np.allclose(rv, 0.9 * 1.0 + 0.1 * x.var(axis=0), rtol=1e-5)

    def test_inference_uses_running_statistics(self):
        x = np.array([[2.0, 4.0]], dtype=np.float32)
        rm = np.array([1.0, 1.0], dtype=np.float32)
        rv = np.array([4.0, 4.0], dtype=np.float32)
        out = T.batch_norm(
            Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
            training=False, running_mean=rm, running_var=rv, eps=0.0,
        ).data
        assert np.allclose(out, [[0.5, 1.5]])

    def test_inference_without_running_stats_rejected(self):
        with pytest.raises(DataError):
            T.batch_norm(Tensor(np.ones((2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), training=False)


class TestBroadcasting:
    def test_add_bias_unbroadcasts_gradient(self):
        x = Tensor(np.ones((4, 3)), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        T.sum_all(T.add(x, b)).backward()
        assert b.grad.shape == (3,)
        assert np.allclose(b.grad, 4.0)

    def test_channel_gate_broadcast_multiply(self):
        x = Tensor(np.ones((2, 3, 3, 4)), requires_grad=True)
        gate = Tensor(np.full((2, 1, 1, 4), 0.5), requires_grad=True)
        out = T.multiply(x, gate)
        assert out.shape == (2, 3, 3, 4)
        T.sum_all(out).backward()
        assert gate.grad.shape == (2, 1, 1, 4)
        assert np.allclose(gate.grad, 9.0)

    @given(
        st.integers(min_value=1, max_value=4),
        st.integers(min_value=1, max_value=4),
    )
    @settings(max_examples=20, deadline=None)
    def test_forward_determinism(self, rows, cols):
        rng = np.random.default_rng(rows * 10 + cols)
        a = rng.random((rows, cols))
        b = rng.random((rows, cols))
        one = T.multiply(Tensor(a), Tensor(b)).data
        two = T.multiply(Tensor(a), Tensor(b)).data
        assert np.array_equal(one, two)
