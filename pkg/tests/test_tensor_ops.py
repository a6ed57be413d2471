"""Forward-value checks for the tensor engine against loop oracles and
hand-computed cases, plus the structural error contracts (shape checks,
double-backward rejection, dtype mixing)."""

import numpy as np
import pytest

from fewshot.errors import GraphError, NumericError, ShapeError
from fewshot.tensor import (Tensor, add, backward, concat, constant, conv2d,
                            cosine_similarity, distance_euclidean, linear,
                            lstm_step, matmul, maxpool2d, mean, mul, narrow,
                            neg, relu, repeat_rows, reshape, sigmoid,
                            softmax_cross_entropy, softmax_rows, sub, sum_,
                            tanh, tensor, tile_rows, transpose, zeros)

from oracles import (conv2d_loops, cosine_rows_loops, euclidean_rows_loops,
                     linear_loops, maxpool2d_loops, softmax_rows_loops)


def t64(arr, grad=False):
    return tensor(np.asarray(arr, dtype=np.float64), dtype="f64", requires_grad=grad)


class TestElementwise:
    def test_add_broadcast(self, rng):
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5,))
        out = add(t64(a), t64(b))
        np.testing.assert_allclose(out.data, a + b)

    def test_sub_mul_neg(self, rng):
        a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        np.testing.assert_allclose(sub(t64(a), t64(b)).data, a - b)
        np.testing.assert_allclose(mul(t64(a), t64(b)).data, a * b)
        np.testing.assert_allclose(neg(t64(a)).data, -a)

    def test_scalar_rhs(self):
        out = mul(t64([1.0, 2.0]), 3.0)
        np.testing.assert_allclose(out.data, [3.0, 6.0])

    def test_relu_sigmoid_tanh(self, rng):
        x = rng.standard_normal(50)
        np.testing.assert_allclose(relu(t64(x)).data, np.maximum(x, 0))
        np.testing.assert_allclose(sigmoid(t64(x)).data, 1 / (1 + np.exp(-x)), rtol=1e-12)
        np.testing.assert_allclose(tanh(t64(x)).data, np.tanh(x), rtol=1e-12)

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = sigmoid(t64([-800.0, 800.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(0.0, abs=1e-300)
        assert out.data[1] == pytest.approx(1.0)

    def test_dtype_mix_rejected(self):
        a = tensor([1.0], dtype="f32")
        b = tensor([1.0], dtype="f64")
        with pytest.raises(ShapeError):
            add(a, b)


class TestShapeOps:
    def test_reshape_transpose(self, rng):
        a = rng.standard_normal((2, 6))
        np.testing.assert_allclose(reshape(t64(a), (3, 4)).data, a.reshape(3, 4))
        np.testing.assert_allclose(transpose(t64(a)).data, a.T)

    def test_narrow_rows_and_cols(self, rng):
        a = rng.standard_normal((5, 4))
        np.testing.assert_allclose(narrow(t64(a), 0, 1, 2).data, a[1:3])
        np.testing.assert_allclose(narrow(t64(a), 1, 2, 2).data, a[:, 2:4])
        with pytest.raises(ShapeError):
            narrow(t64(a), 0, 4, 3)

    def test_concat(self, rng):
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
        np.testing.assert_allclose(concat([t64(a), t64(b)], axis=0).data,
                                   np.concatenate([a, b]))

    def test_repeat_tile_rows(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(repeat_rows(t64(a), 2).data,
                                   [[1, 2], [1, 2], [3, 4], [3, 4]])
        np.testing.assert_allclose(tile_rows(t64(a), 2).data,
                                   [[1, 2], [3, 4], [1, 2], [3, 4]])

    def test_sum_mean_axes(self, rng):
        a = rng.standard_normal((3, 4))
        np.testing.assert_allclose(sum_(t64(a)).data, a.sum())
        np.testing.assert_allclose(sum_(t64(a), axis=0).data, a.sum(axis=0))
        np.testing.assert_allclose(mean(t64(a), axis=1, keepdims=True).data,
                                   a.mean(axis=1, keepdims=True))


class TestMatmulLinear:
    def test_matmul(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        np.testing.assert_allclose(matmul(t64(a), t64(b)).data, a @ b, rtol=1e-12)

    def test_matmul_shape_error_names_both(self, rng):
        a, b = t64(rng.standard_normal((3, 4))), t64(rng.standard_normal((3, 2)))
        with pytest.raises(ShapeError) as e:
            matmul(a, b)
        assert "(3, 4)" in str(e.value) and "(3, 2)" in str(e.value)

    def test_linear_matches_loops(self, rng):
        x = rng.standard_normal((6, 5))
        w = rng.standard_normal((3, 5))
        b = rng.standard_normal(3)
        out = linear(t64(x), t64(w), t64(b))
        np.testing.assert_allclose(out.data, linear_loops(x, w, b), atol=1e-12)


class TestConvPool:
    @pytest.mark.parametrize("bsz,c,h,f,k,stride,pad", [
        (1, 1, 5, 1, 3, 1, 0),
        (2, 3, 8, 4, 3, 1, 1),
        (2, 2, 9, 3, 3, 2, 1),
        (1, 4, 6, 2, 2, 2, 0),
    ])
    def test_conv2d_matches_loops(self, rng, bsz, c, h, f, k, stride, pad):
        x = rng.standard_normal((bsz, c, h, h))
        w = rng.standard_normal((f, c, k, k))
        b = rng.standard_normal(f)
        out = conv2d(t64(x), t64(w), t64(b), stride=stride, pad=pad)
        np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, stride, pad), atol=1e-12)

    def test_conv2d_channel_mismatch_names_shapes(self, rng):
        x = t64(rng.standard_normal((1, 3, 5, 5)))
        w = t64(rng.standard_normal((2, 4, 3, 3)))
        with pytest.raises(ShapeError) as e:
            conv2d(x, w, t64(np.zeros(2)))
        msg = str(e.value)
        assert "(1, 3, 5, 5)" in msg and "(2, 4, 3, 3)" in msg

    def test_conv2d_rejects_nonfinite_input(self):
        x = np.zeros((1, 1, 4, 4))
        x[0, 0, 1, 1] = np.nan
        with pytest.raises(NumericError):
            conv2d(t64(x), t64(np.ones((1, 1, 3, 3))), t64(np.zeros(1)))

    @pytest.mark.parametrize("k,stride", [(2, 2), (3, 1), (2, 1)])
    def test_maxpool_matches_loops(self, rng, k, stride):
        x = rng.standard_normal((2, 3, 8, 8))
        out = maxpool2d(t64(x), k, stride)
        np.testing.assert_allclose(out.data, maxpool2d_loops(x, k, stride))

    def test_maxpool_tie_gradient_goes_to_first(self):
        # all-equal window: the gradient must land on the row-major-first cell
        x = t64(np.ones((1, 1, 2, 2)), grad=True)
        out = maxpool2d(x, 2, 2)
        backward(sum_(out))
        expected = np.zeros((1, 1, 2, 2))
        expected[0, 0, 0, 0] = 1.0
        np.testing.assert_array_equal(x.grad, expected)


class TestSoftmaxAndLosses:
    def test_softmax_rows(self, rng):
        z = rng.standard_normal((6, 9))
        out = softmax_rows(t64(z))
        np.testing.assert_allclose(out.data, softmax_rows_loops(z), rtol=1e-12)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(6), rtol=1e-12)

    def test_softmax_shift_invariance(self, rng):
        z = rng.standard_normal((2, 5))
        a = softmax_rows(t64(z)).data
        b = softmax_rows(t64(z + 1000.0)).data
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_cross_entropy_uniform_probs(self):
        # uniform over 5 classes -> loss ln 5 (~1.6094)
        probs = np.full((4, 5), 0.2)
        y = np.eye(5)[[0, 1, 2, 3]]
        loss = softmax_cross_entropy(t64(probs), t64(y), input_is_probs=True)
        assert float(loss.data) == pytest.approx(np.log(5.0), rel=1e-12)

    def test_cross_entropy_logits_match_manual(self, rng):
        z = rng.standard_normal((3, 4))
        y = np.eye(4)[[1, 0, 3]]
        loss = softmax_cross_entropy(t64(z), t64(y))
        p = softmax_rows_loops(z)
        manual = -np.mean([np.log(p[i, [1, 0, 3][i]]) for i in range(3)])
        assert float(loss.data) == pytest.approx(manual, rel=1e-12)

    def test_cross_entropy_clamps_zero_prob(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        y = np.array([[0.0, 1.0], [1.0, 0.0]])  # true class has prob 0
        loss = softmax_cross_entropy(t64(probs), t64(y), input_is_probs=True)
        assert np.isfinite(loss.data)
        assert float(loss.data) == pytest.approx(-np.log(1e-12), rel=1e-6)

    def test_cross_entropy_rejects_bad_one_hot(self):
        probs = t64(np.full((2, 2), 0.5))
        with pytest.raises(NumericError):
            softmax_cross_entropy(probs, t64([[0.5, 0.5], [1.0, 0.0]]),
                                  input_is_probs=True)

    def test_cross_entropy_rejects_non_distribution_rows(self):
        bad = t64([[0.9, 0.9], [0.5, 0.5]])
        with pytest.raises(NumericError):
            softmax_cross_entropy(bad, t64([[1.0, 0.0], [0.0, 1.0]]),
                                  input_is_probs=True)


class TestDistances:
    def test_euclidean_matches_loops(self, rng):
        a, b = rng.standard_normal((7, 5)), rng.standard_normal((7, 5))
        out = distance_euclidean(t64(a), t64(b))
        np.testing.assert_allclose(out.data, euclidean_rows_loops(a, b), atol=1e-12)

    def test_cosine_matches_loops(self, rng):
        a, b = rng.standard_normal((7, 5)), rng.standard_normal((7, 5))
        out = cosine_similarity(t64(a), t64(b))
        np.testing.assert_allclose(out.data, cosine_rows_loops(a, b), atol=1e-12)

    def test_cosine_zero_vector_uses_floor(self):
        a = np.zeros((1, 4))
        b = np.ones((1, 4))
        out = cosine_similarity(t64(a), t64(b))
        assert float(out.data[0]) == 0.0  # 0 / (floor * |b|)

    def test_euclidean_zero_distance_has_zero_grad(self):
        a = t64(np.ones((2, 3)), grad=True)
        b = t64(np.ones((2, 3)))
        d = distance_euclidean(a, b)
        backward(sum_(d))
        np.testing.assert_array_equal(a.grad, np.zeros((2, 3)))


class TestLstmStep:
    def test_zero_weights_halve_cell(self, rng):
        # all-zero weights: gates sigmoid(0)=0.5, candidate tanh(0)=0,
        # so c' = 0.5*c and h' = 0.5*tanh(0.5*c)
        d = 4
        c0 = rng.standard_normal((2, d))
        h, c = lstm_step(t64(np.zeros((2, d))), t64(np.zeros((2, d))), t64(c0),
                         t64(np.zeros((4 * d, d))), t64(np.zeros((4 * d, d))),
                         t64(np.zeros(4 * d)))
        np.testing.assert_allclose(c.data, 0.5 * c0, rtol=1e-12)
        np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c0), rtol=1e-12)

    def test_weight_shape_validated(self, rng):
        d = 3
        args = [t64(np.zeros((1, d))), t64(np.zeros((1, d))), t64(np.zeros((1, d)))]
        with pytest.raises(ShapeError):
            lstm_step(*args, t64(np.zeros((4 * d, d + 1))),
                      t64(np.zeros((4 * d, d))), t64(np.zeros(4 * d)))


class TestGraphMechanics:
    def test_gradient_accumulates_across_uses(self):
        x = t64([2.0], grad=True)
        y = add(mul(x, 3.0), mul(x, 4.0))  # dy/dx = 7
        backward(sum_(y))
        np.testing.assert_allclose(x.grad, [7.0])

    def test_backward_requires_scalar(self):
        x = t64([1.0, 2.0], grad=True)
        with pytest.raises(GraphError):
            backward(mul(x, 2.0))

    def test_double_backward_rejected(self):
        x = t64([1.0], grad=True)
        y = sum_(mul(x, x))
        backward(y)
        with pytest.raises(GraphError):
            backward(y)

    def test_leaf_reuse_in_fresh_graph_is_fine(self):
        x = t64([3.0], grad=True)
        backward(sum_(mul(x, 2.0)))
        first = x.grad.copy()
        x.grad = np.zeros_like(x.grad)
        backward(sum_(mul(x, 5.0)))
        np.testing.assert_allclose(first, [2.0])
        np.testing.assert_allclose(x.grad, [5.0])

    def test_no_grad_forward_builds_no_graph(self):
        x = tensor([1.0, 2.0])
        out = mul(x, 3.0)
        assert out._parents == () and out._backward is None

    def test_constant_cuts_gradient(self):
        x = t64([2.0], grad=True)
        y = mul(constant(x), 3.0)
        assert not y.requires_grad

    def test_broadcast_bias_grad_sums(self):
        b = t64([1.0, 2.0], grad=True)
        x = t64(np.zeros((3, 2)))
        backward(sum_(add(x, b)))
        np.testing.assert_allclose(b.grad, [3.0, 3.0])
