from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import matmul_loop, softmax_nll, windowed_max

from spectronet.autograd import (
    BatchNormState,
    Tensor,
    affine,
    batch_norm2d,
    channel_concat,
    cross_entropy_from_logits,
    global_pool,
    max_pool2d,
    relu,
)
from spectronet.autograd.ops import avg_pool2d


class TestMaxPool:
    def test_two_by_two(self):
        out = max_pool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2)
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_constant(self):
        out = max_pool2d(Tensor(np.full((1, 2, 6, 6), 7.0)), 3, 1)
        assert np.all(out.data == 7.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), window=st.integers(1, 3), stride=st.integers(1, 3))
    def test_matches_windowed_max(self, seed, window, stride):
        x = np.random.default_rng(seed).standard_normal((2, 2, 6, 6))
        out = max_pool2d(Tensor(x), window, stride)
        np.testing.assert_array_equal(out.data, windowed_max(x, window, stride))

    def test_tie_goes_to_first(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        max_pool2d(x, 2).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_overlapping_windows_accumulate(self):
        x = Tensor(np.array([[[[0.0, 5.0, 0.0]]]]), requires_grad=True)
        max_pool2d(x, (1, 2), (1, 1)).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[0.0, 2.0, 0.0]])

    def test_padding_never_wins(self):
        x = -np.ones((1, 1, 3, 3))
        out = max_pool2d(Tensor(x), 3, 2, padding=1)
        assert np.all(out.data == -1.0)

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            max_pool2d(Tensor(np.zeros((1, 1, 2, 2))), 3)


class TestGlobalAndAvgPool:
    def test_one_by_one_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 1, 1))
        for kind in ("avg", "max"):
            np.testing.assert_array_equal(global_pool(Tensor(x), kind).data, x)

    def test_avg(self):
        assert global_pool(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), "avg").data.item() == 2.5

    def test_max_over_all_cells(self):
        x = np.random.default_rng(1).standard_normal((1, 1, 5, 7))
        out = global_pool(Tensor(x), "max")
        assert out.shape == (1, 1, 1, 1) and out.data.item() == x.reshape(-1).max()

    def test_any_extent(self):
        for h, w in [(1, 9), (7, 3), (13, 13)]:
            assert global_pool(Tensor(np.zeros((2, 4, h, w))), "avg").shape == (2, 4, 1, 1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            global_pool(Tensor(np.zeros((1, 1, 2, 2))), "median")

    def test_avg_pool(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(avg_pool2d(Tensor(x), 2).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


class TestBatchNorm:
    def test_eval_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
        state = BatchNormState.create(3, dtype=np.float64)
        out = batch_norm2d(Tensor(x), state, "eval").data
        np.testing.assert_allclose(out, x / math.sqrt(1 + state.eps), rtol=1e-12)
        np.testing.assert_allclose(out, x, atol=1e-5 * np.abs(x).max())

    def test_train_moments(self):
        rng = np.random.default_rng(1)
        x = 3.0 + 2.0 * rng.standard_normal((4, 3, 5, 5))
        state = BatchNormState.create(3, dtype=np.float64)
        state.gamma.data[:] = [0.5, 2.0, 1.5]
        state.beta.data[:] = [-1.0, 0.0, 4.0]
        out = batch_norm2d(Tensor(x), state, "train").data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), state.beta.data, atol=1e-5)
        # Biased batch variance is gamma^2 up to the eps regularizer.
        var = x.var(axis=(0, 2, 3))
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), state.gamma.data**2 * var / (var + state.eps), atol=1e-12)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), state.gamma.data**2, rtol=1e-5)

    def test_zero_gamma(self):
        state = BatchNormState.create(2, dtype=np.float64)
        state.gamma.data[:] = 0.0
        state.beta.data[:] = [0.25, -3.0]
        out = batch_norm2d(Tensor(np.random.default_rng(2).standard_normal((3, 2, 4, 4))), state, "train").data
        assert np.all(out[:, 0] == 0.25) and np.all(out[:, 1] == -3.0)

    def test_running_stats_update(self):
        x = np.random.default_rng(3).standard_normal((5, 2, 3, 3))
        state = BatchNormState.create(2, dtype=np.float64)
        batch_norm2d(Tensor(x), state, "train")
        count = 5 * 3 * 3
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1))

    def test_eval_leaves_running_stats(self):
        state = BatchNormState.create(2, dtype=np.float64)
        batch_norm2d(Tensor(np.ones((2, 2, 2, 2))), state, "eval")
        assert np.all(state.running_mean == 0) and np.all(state.running_var == 1)

    def test_errors(self):
        state = BatchNormState.create(2)
        with pytest.raises(ValueError):
            batch_norm2d(Tensor(np.zeros((0, 2, 2, 2))), state)
        with pytest.raises(ValueError):
            batch_norm2d(Tensor(np.zeros((1, 3, 2, 2))), state)


class TestAffineReluConcat:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((4, 3))
        np.testing.assert_array_equal(affine(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)

    def test_matches_loop(self):
        rng = np.random.default_rng(1)
        x, w = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        np.testing.assert_allclose(affine(Tensor(x), Tensor(w)).data, matmul_loop(x, w), atol=1e-6)

    def test_affine_mismatch(self):
        with pytest.raises(ValueError):
            affine(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0.0, 0.0, 2.0])
        pos = np.array([0.5, 3.0])
        np.testing.assert_array_equal(relu(Tensor(pos)).data, pos)

    def test_relu_gradient(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        relu(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])
        z = Tensor(np.array([0.0]), requires_grad=True)
        relu(z).sum().backward()
        assert z.grad[0] == 0.0

    def test_concat_single_is_identity(self):
        t = Tensor(np.ones((1, 2, 3, 3)))
        assert channel_concat([t]) is t

    def test_concat_two(self):
        a, b = Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2)))
        out = channel_concat([a, b]).data
        assert out.shape == (1, 2, 2, 2) and np.all(out[:, 0] == 0) and np.all(out[:, 1] == 1)

    def test_concat_slice_back(self):
        rng = np.random.default_rng(2)
        parts = [Tensor(rng.standard_normal((2, 8, 3, 4)), requires_grad=True) for _ in range(4)]
        out = channel_concat(parts)
        assert out.shape == (2, 32, 3, 4)
        for i, p in enumerate(parts):
            np.testing.assert_array_equal(out.data[:, i * 8 : (i + 1) * 8], p.data)
        weights = rng.standard_normal(out.shape)
        (out * Tensor(weights)).sum().backward()
        for i, p in enumerate(parts):
            np.testing.assert_array_equal(p.grad, weights[:, i * 8 : (i + 1) * 8])

    def test_concat_mismatch(self):
        with pytest.raises(ValueError):
            channel_concat([Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2)))])


class TestCrossEntropy:
    def test_uniform(self):
        loss = cross_entropy_from_logits(Tensor(np.zeros((3, 4))), [0, 1, 3]).item()
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_saturated(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 1000.0
        loss = cross_entropy_from_logits(Tensor(logits), [2]).item()
        assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)

    def test_direct_value(self):
        loss = cross_entropy_from_logits(Tensor(np.array([[1.0, 2.0, 3.0]])), [2]).item()
        assert loss == pytest.approx(softmax_nll([1.0, 2.0, 3.0], 2), abs=1e-12)
        assert loss == pytest.approx(0.4076, abs=1e-4)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy_from_logits(Tensor(np.zeros((1, 3))), [3])
        with pytest.raises(ValueError):
            cross_entropy_from_logits(Tensor(np.zeros((1, 3))), [-1])
