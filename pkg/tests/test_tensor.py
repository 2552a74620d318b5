from __future__ import annotations

import numpy as np
import pytest

from spectronet.autograd import ConvGeometry, Parameter, Tensor, affine, conv2d, no_grad, relu
from spectronet.autograd.tensor import is_grad_enabled


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_accumulates_without_reset(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * x).sum().backward()
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])

    def test_repeatable_after_reset(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
        w = Parameter(rng.standard_normal((3, 2, 3, 3)))
        loss = relu(conv2d(x, w, None, ConvGeometry.same(3, 2))).sum()
        loss.backward()
        first = (x.grad.copy(), w.grad.copy())
        x.zero_grad()
        w.zero_grad()
        loss.backward()
        assert x.grad.tobytes() == first[0].tobytes()
        assert w.grad.tobytes() == first[1].tobytes()

    def test_non_scalar_root(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_explicit_seed_for_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        (x * 3.0).backward(np.array([1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(x.grad, [3.0, 0.0, 6.0])

    def test_shared_subexpression(self):
        # d/dx of (x + x) * x = 4x
        x = Tensor(np.array([0.5, -1.5]), requires_grad=True)
        y = x + x
        (y * x).sum().backward()
        np.testing.assert_allclose(x.grad, 4 * x.data)

    def test_broadcast_unbroadcasts(self):
        x = Tensor(np.ones((4, 3)), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        ((x + b) * 2.0).sum().backward()
        np.testing.assert_array_equal(b.grad, [8.0, 8.0, 8.0])

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.sum().backward()
        np.testing.assert_array_equal(x.grad, [1.0])

    def test_no_grad(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = (x * x).sum()
        assert is_grad_enabled()
        assert not y.requires_grad

    def test_backward_on_constant_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.array(1.0)).backward()


class TestTensorBasics:
    def test_integer_input_becomes_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_parameter_copies(self):
        src = np.zeros(3, dtype=np.float32)
        p = Parameter(src)
        p.data += 1
        assert src.sum() == 0 and p.requires_grad

    def test_matmul_and_mean_grad(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        (a @ b).mean().backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T / 6)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)) / 6)

    def test_reshape_flatten(self):
        x = Tensor(np.arange(24.0).reshape(2, 3, 2, 2), requires_grad=True)
        f = x.flatten()
        assert f.shape == (2, 12)
        (f * Tensor(np.arange(24.0).reshape(2, 12))).sum().backward()
        np.testing.assert_array_equal(x.grad, np.arange(24.0).reshape(2, 3, 2, 2))

    def test_affine_mixed_graph(self):
        x = Tensor(np.array([[1.0, 2.0]]))
        out = affine(x, Tensor(np.eye(2)), Tensor(np.array([10.0, 10.0])))
        np.testing.assert_array_equal(out.data, [[11.0, 12.0]])
