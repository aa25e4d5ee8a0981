"""Forward-value oracles and finite-difference gradient checks for the tensor core."""

import numpy as np
import pytest

from drax import tensor as T
from drax.tensor import ParamStore, Parameter, ShapeError, Tensor

from helpers import check_gradients, finite_difference, matmul_oracle, relative_error, softmax_oracle


class TestForwardValues:
    def test_add_broadcast(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        b = Tensor(np.array([10.0, 20.0, 30.0]))
        out = a + b
        np.testing.assert_array_equal(out.data, a.data + b.data)

    def test_matmul_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            a = rng.normal(size=(4, 3))
            b = rng.normal(size=(3, 5))
            got = T.matmul(Tensor(a), Tensor(b)).data
            np.testing.assert_allclose(got, matmul_oracle(a, b), rtol=0, atol=1e-12)

    def test_batched_matmul_matches_per_slice(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4, 2))
        b = rng.normal(size=(3, 2, 5))
        got = T.matmul(Tensor(a), Tensor(b)).data
        for h in range(3):
            np.testing.assert_allclose(got[h], matmul_oracle(a[h], b[h]), atol=1e-12)

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 4, 5))))
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros(3)), Tensor(np.zeros(3)))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 7)) * 5
        out = T.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(4), atol=1e-12)
        for i in range(4):
            np.testing.assert_allclose(out[i], softmax_oracle(x[i]), atol=1e-12)

    def test_softmax_handles_large_values(self):
        x = Tensor(np.array([[1000.0, 1000.0, 999.0]]))
        out = T.softmax(x, axis=-1).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)

    def test_elu_values(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        out = T.elu(Tensor(x)).data
        expected = np.where(x >= 0, x, np.exp(x) - 1.0)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_relu_values(self):
        x = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(T.relu(Tensor(x)).data, [0.0, 0.0, 2.0])

    def test_layer_norm_zero_mean_unit_variance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 8)) * 3 + 1
        gain = Tensor(np.ones(8))
        bias = Tensor(np.zeros(8))
        out = T.layer_norm(Tensor(x), gain, bias).data
        np.testing.assert_allclose(out.mean(axis=-1), np.zeros(5), atol=1e-10)
        np.testing.assert_allclose(out.var(axis=-1), np.ones(5), atol=1e-4)

    def test_concat_and_split_grad_shapes(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.zeros((4, 3)))
        out = T.concat([a, b], axis=0)
        assert out.shape == (6, 3)

    def test_mean_matches_numpy(self):
        x = np.arange(12.0).reshape(3, 4)
        np.testing.assert_allclose(T.tensor_mean(Tensor(x), axis=0).data, x.mean(axis=0))
        np.testing.assert_allclose(T.tensor_mean(Tensor(x)).data, x.mean())

    def test_item_requires_scalar(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros(3)).item()


class TestBackward:
    def test_scalar_chain(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x + x  # d/dx = 2x + 1 = 7
        T.backward(y)
        np.testing.assert_allclose(x.grad, 7.0)

    def test_requires_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            T.backward(x * 2.0)

    def test_repeated_operand_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        y = T.mul(x, x)  # same node twice; d/dx = 2x = 4
        T.backward(y)
        np.testing.assert_allclose(x.grad, 4.0)

    def test_second_backward_adds_another_copy(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = T.tensor_sum(x * x)
        T.backward(loss)
        first = x.grad.copy()
        T.backward(loss)
        np.testing.assert_allclose(x.grad, 2.0 * first)

    def test_no_grad_blocks_recording(self):
        x = Tensor(1.0, requires_grad=True)
        with T.no_grad():
            y = x * 3.0
        assert not y.requires_grad
        assert y.is_leaf()

    @pytest.mark.parametrize("seed", range(4))
    def test_matmul_chain_gradients(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

        def loss():
            return T.tensor_sum(T.elu(T.matmul(a, b)))

        check_gradients(loss, [a, b], tol=1e-7)

    @pytest.mark.parametrize("seed", range(4))
    def test_softmax_gradients(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 5)))

        def loss():
            return T.tensor_sum(T.softmax(x, axis=-1) * w)

        check_gradients(loss, [x], tol=1e-7)

    def test_layer_norm_gradients(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
        gain = Tensor(rng.normal(size=6), requires_grad=True)
        bias = Tensor(rng.normal(size=6), requires_grad=True)
        w = rng.normal(size=(2, 6))

        def loss():
            return T.tensor_sum(T.layer_norm(x, gain, bias) * w)

        check_gradients(loss, [x, gain, bias], tol=1e-6)

    def test_batched_matmul_gradients(self):
        rng = np.random.default_rng(8)
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)

        def loss():
            return T.tensor_sum(T.matmul(a, b))

        check_gradients(loss, [a, b], tol=1e-7)

    def test_index_reshape_transpose_concat_gradients(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        w = rng.normal(size=(6, 7))

        def loss():
            head = x[1:3]
            rest = x[0:1]
            merged = T.concat([head, rest, x[3:]], axis=0)
            flipped = T.transpose(merged)
            back = T.reshape(flipped, (4, 6))
            return T.tensor_sum(T.matmul(back, Tensor(w)) * 0.5)

        check_gradients(loss, [x], tol=1e-7)

    def test_broadcast_add_gradients(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 4)), requires_grad=True)

        def loss():
            return T.tensor_sum(T.relu(x + b))

        check_gradients(loss, [x, b], tol=1e-7)

    def test_grad_against_manual_finite_difference(self):
        # Direct use of the helper on a fresh array, independent of check_gradients.
        x = np.array([[0.3, -0.2], [0.1, 0.4]])

        def value():
            return float(np.sum(np.tanh(x)))

        fd = finite_difference(value, x)
        np.testing.assert_allclose(fd, 1.0 / np.cosh(x) ** 2, atol=1e-6)


class TestParamStore:
    def test_same_seed_same_parameters(self):
        def build(seed):
            store = ParamStore(seed)
            store.matrix("w", 4, 5)
            store.zeros("b", (5,))
            store.row("cls", 5)
            return store

        s1, s2 = build(11), build(11)
        for name in s1.params:
            np.testing.assert_array_equal(s1.params[name].data, s2.params[name].data)

    def test_duplicate_name_rejected(self):
        store = ParamStore(0)
        store.matrix("w", 2, 2)
        with pytest.raises(ValueError, match="duplicate"):
            store.matrix("w", 2, 2)

    def test_uniform_bound(self):
        store = ParamStore(5)
        w = store.matrix("w", 30, 50)
        bound = np.sqrt(6.0 / 80.0)
        assert np.all(np.abs(w.data) <= bound)

    def test_parameter_requires_name(self):
        with pytest.raises(ValueError):
            Parameter("", np.zeros(2))

    def test_relative_error_helper(self):
        assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
        assert relative_error(np.array([2.0]), np.array([1.0])) == 0.5
