"""Central finite-difference checks (f64) for every autodiff primitive and
for the two full model losses. Relative-error tolerance 1e-5 throughout."""

import numpy as np
import pytest

from fewshot.gradcheck import finite_diff_check
from fewshot.nets import (BackboneSpec, contrastive_loss, fce_query,
                          fce_support, init_fce, init_siamese, matching_predict,
                          siamese_forward_pair)
from fewshot.tensor import (add, concat, conv2d, cosine_similarity,
                            distance_euclidean, linear, lstm_step, matmul,
                            maxpool2d, mean, mul, narrow, relu, repeat_rows,
                            reshape, sigmoid, softmax_cross_entropy,
                            softmax_rows, sub, sum_, tanh, tensor, tile_rows,
                            transpose)

TOL = 1e-5
N_INSTANCES = 5


def p64(rng, shape):
    return tensor(rng.standard_normal(shape), dtype="f64", requires_grad=True)


def check(build_loss, params, tol=TOL, **kw):
    report = finite_diff_check(build_loss, params, **kw)
    assert report.ok(tol), (
        f"max rel err {report.max_rel_err:.2e} in {report.worst_param}"
        f"[{report.worst_index}] analytic={report.analytic} numeric={report.numeric}")


# settings for full-model losses: tiny-gradient coordinates are compared
# against an absolute floor instead of drowning in step roundoff, and for
# losses that run through relu/maxpool stacks a coordinate whose finite
# difference straddles a kink is rejected by the step-size stability check
SMOOTH_MODEL_CHECK = dict(eps=1e-6, denom_floor=1e-4)
KINKED_MODEL_CHECK = dict(eps=1e-6, denom_floor=1e-4, stability_check=True)


def seeds():
    return range(N_INSTANCES)


class TestPrimitiveGradients:
    @pytest.mark.parametrize("seed", seeds())
    def test_add_sub_mul_broadcast(self, seed):
        rng = np.random.default_rng(seed)
        a, b = p64(rng, (3, 4)), p64(rng, (4,))
        check(lambda: sum_(mul(add(a, b), sub(a, b))), {"a": a, "b": b})

    @pytest.mark.parametrize("seed", seeds())
    def test_activations(self, seed):
        rng = np.random.default_rng(10 + seed)
        x = p64(rng, (4, 3))
        check(lambda: sum_(mul(sigmoid(x), tanh(x))), {"x": x})

    @pytest.mark.parametrize("seed", seeds())
    def test_relu_off_kink(self, seed):
        rng = np.random.default_rng(20 + seed)
        # keep inputs away from the kink so finite differences are valid
        data = rng.standard_normal((5, 4))
        data[np.abs(data) < 0.1] += 0.2
        x = tensor(data, dtype="f64", requires_grad=True)
        check(lambda: sum_(relu(x)), {"x": x})

    @pytest.mark.parametrize("seed", seeds())
    def test_matmul_transpose(self, seed):
        rng = np.random.default_rng(30 + seed)
        a, b = p64(rng, (3, 4)), p64(rng, (3, 2))
        check(lambda: sum_(matmul(a, transpose(transpose(matmul(transpose(a), b))))),
              {"a": a, "b": b})

    @pytest.mark.parametrize("seed", seeds())
    def test_reshape_narrow_concat(self, seed):
        rng = np.random.default_rng(40 + seed)
        a = p64(rng, (4, 6))
        def loss():
            left = narrow(a, 1, 0, 3)
            right = narrow(a, 1, 3, 3)
            glued = concat([reshape(left, (2, 6)), reshape(right, (2, 6))], axis=0)
            return sum_(mul(glued, glued))
        check(loss, {"a": a})

    @pytest.mark.parametrize("seed", seeds())
    def test_repeat_tile_rows(self, seed):
        rng = np.random.default_rng(50 + seed)
        a, b = p64(rng, (3, 4)), p64(rng, (2, 4))
        check(lambda: sum_(mul(repeat_rows(a, 2), tile_rows(b, 3))),
              {"a": a, "b": b})

    @pytest.mark.parametrize("seed", seeds())
    def test_mean_axes(self, seed):
        rng = np.random.default_rng(60 + seed)
        a = p64(rng, (3, 5))
        check(lambda: sum_(mul(mean(a, axis=1, keepdims=True), a)), {"a": a})

    @pytest.mark.parametrize("seed", seeds())
    def test_softmax_rows(self, seed):
        rng = np.random.default_rng(70 + seed)
        z, w = p64(rng, (4, 5)), p64(rng, (4, 5))
        check(lambda: sum_(mul(softmax_rows(z), w)), {"z": z, "w": w})

    @pytest.mark.parametrize("seed", seeds())
    def test_linear(self, seed):
        rng = np.random.default_rng(80 + seed)
        x, w, b = p64(rng, (4, 3)), p64(rng, (2, 3)), p64(rng, (2,))
        check(lambda: sum_(mul(linear(x, w, b), linear(x, w, b))),
              {"x": x, "w": w, "b": b})

    @pytest.mark.parametrize("seed", seeds())
    def test_conv2d(self, seed):
        rng = np.random.default_rng(90 + seed)
        x, w, b = p64(rng, (2, 2, 5, 5)), p64(rng, (3, 2, 3, 3)), p64(rng, (3,))
        check(lambda: sum_(mul(conv2d(x, w, b, stride=1, pad=1),
                               conv2d(x, w, b, stride=1, pad=1))),
              {"x": x, "w": w, "b": b})

    @pytest.mark.parametrize("seed", seeds())
    def test_conv2d_strided(self, seed):
        rng = np.random.default_rng(100 + seed)
        x, w, b = p64(rng, (1, 2, 6, 6)), p64(rng, (2, 2, 3, 3)), p64(rng, (2,))
        check(lambda: sum_(conv2d(x, w, b, stride=2, pad=0)), {"x": x, "w": w, "b": b})

    @pytest.mark.parametrize("seed", seeds())
    def test_maxpool(self, seed):
        rng = np.random.default_rng(110 + seed)
        # distinct values keep the argmax stable under the fd perturbation
        data = rng.permutation(64).reshape(1, 1, 8, 8) * 0.37
        x = tensor(data, dtype="f64", requires_grad=True)
        check(lambda: sum_(mul(maxpool2d(x, 2, 2), maxpool2d(x, 2, 2))), {"x": x})

    @pytest.mark.parametrize("seed", seeds())
    def test_lstm_step(self, seed):
        rng = np.random.default_rng(120 + seed)
        d = 3
        x, h, c = p64(rng, (2, d)), p64(rng, (2, d)), p64(rng, (2, d))
        wx, wh, b = p64(rng, (4 * d, d)), p64(rng, (4 * d, d)), p64(rng, (4 * d,))
        def loss():
            h2, c2 = lstm_step(x, h, c, wx, wh, b)
            return add(sum_(mul(h2, h2)), sum_(mul(c2, c2)))
        check(loss, {"x": x, "h": h, "c": c, "wx": wx, "wh": wh, "b": b})

    @pytest.mark.parametrize("seed", seeds())
    def test_cross_entropy_logits(self, seed):
        rng = np.random.default_rng(130 + seed)
        z = p64(rng, (4, 5))
        y = tensor(np.eye(5)[rng.integers(0, 5, size=4)], dtype="f64")
        check(lambda: softmax_cross_entropy(z, y), {"z": z})

    @pytest.mark.parametrize("seed", seeds())
    def test_cross_entropy_probs(self, seed):
        # the probs path validates row sums, so perturb pre-softmax logits
        rng = np.random.default_rng(140 + seed)
        z = p64(rng, (4, 5))
        y = tensor(np.eye(5)[rng.integers(0, 5, size=4)], dtype="f64")
        check(lambda: softmax_cross_entropy(softmax_rows(z), y,
                                            input_is_probs=True), {"z": z})

    @pytest.mark.parametrize("seed", seeds())
    def test_distances(self, seed):
        rng = np.random.default_rng(150 + seed)
        a, b = p64(rng, (4, 3)), p64(rng, (4, 3))
        check(lambda: sum_(distance_euclidean(a, b)), {"a": a, "b": b})
        check(lambda: sum_(cosine_similarity(a, b)), {"a": a, "b": b})


class TestModelGradients:
    @pytest.mark.parametrize("seed", seeds())
    def test_siamese_pair_loss(self, seed):
        rng = np.random.default_rng(200 + seed)
        spec = BackboneSpec(input_size=32, embedding_dim=4, dtype="f64")
        w = init_siamese(spec, rng)
        xa = tensor(rng.random((2, 3, 32, 32)), dtype="f64")
        xb = tensor(rng.random((2, 3, 32, 32)), dtype="f64")
        y = tensor(np.array([1.0, 0.0]), dtype="f64")
        def loss():
            d, _ = siamese_forward_pair(xa, xb, w, spec)
            return contrastive_loss(d, y, margin=1.0)
        params = {name: t for name, _, t in w.entries if t.requires_grad}
        # exhaustive probing of ~150k conv weights costs hours; sample
        # coordinates but touch every parameter tensor
        check(loss, params, max_coords=6, rng=rng, **KINKED_MODEL_CHECK)

    @pytest.mark.parametrize("seed", seeds())
    def test_matching_with_fce_loss(self, seed):
        rng = np.random.default_rng(300 + seed)
        d = 4
        w = init_fce(d, rng, np.float64)
        sup = p64(rng, (6, d))
        qry = p64(rng, (3, d))
        onehot = tensor(np.eye(3)[np.repeat(np.arange(3), 2)], dtype="f64")
        y = tensor(np.eye(3)[[0, 1, 2]], dtype="f64")
        def loss():
            ctx = fce_support(sup, w)
            qctx = fce_query(qry, ctx, w, k_steps=3)
            probs = matching_predict(qctx, ctx, onehot)
            return softmax_cross_entropy(probs, y, input_is_probs=True)
        params = {name: t for name, _, t in w.entries if t.requires_grad}
        params["support"] = sup
        params["query"] = qry
        check(loss, params, **SMOOTH_MODEL_CHECK)
