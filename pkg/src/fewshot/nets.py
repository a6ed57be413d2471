"""Model architectures: the shared conv backbone, the siamese pair head,
full-contextual embedding layers, and the cosine-attention classifier.

The backbone is four conv blocks (3x3, 64 filters, pad 1, relu, 2x2
maxpool). 32px inputs flatten the final 2x2 map into the embedding linear
layer; 224px inputs are globally average-pooled first so the linear layer
stays the same size regardless of resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import (
    Tensor,
    add,
    concat,
    conv2d,
    constant,
    cosine_similarity,
    distance_euclidean,
    linear,
    lstm_step,
    matmul,
    maxpool2d,
    mean,
    mul,
    narrow,
    neg,
    relu,
    repeat_rows,
    reshape,
    softmax_rows,
    tile_rows,
    transpose,
    zeros,
)
from .weights import (
    ROLE_BACKBONE,
    ROLE_FCE_F,
    ROLE_FCE_G,
    ROLE_NONE,
    ROLE_SIAMESE_HEAD,
    NetworkWeights,
)

N_BLOCKS = 4
N_FILTERS = 64
VALID_INPUT_SIZES = (32, 224)


@dataclass(frozen=True)
class BackboneSpec:
    input_size: int = 32
    embedding_dim: int = 64
    dtype: str = "f32"

    def __post_init__(self):
        if self.input_size not in VALID_INPUT_SIZES:
            raise ShapeError(f"input_size must be one of {VALID_INPUT_SIZES}, got {self.input_size}")
        if self.embedding_dim < 1:
            raise ShapeError(f"embedding_dim must be positive, got {self.embedding_dim}")

    @property
    def final_spatial(self) -> int:
        return self.input_size // (2 ** N_BLOCKS)

    @property
    def flat_dim(self) -> int:
        # 224px inputs are average-pooled to one value per channel
        if self.input_size == 224:
            return N_FILTERS
        return N_FILTERS * self.final_spatial * self.final_spatial


@dataclass(frozen=True)
class MatchingConfig:
    fce_enabled: bool = True
    fce_read_steps: int = 3

    def __post_init__(self):
        if self.fce_enabled and self.fce_read_steps < 1:
            raise ShapeError(f"fce_read_steps must be >= 1, got {self.fce_read_steps}")


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = float(np.sqrt(1.0 / fan_in))
    arr = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(arr, requires_grad=True)


def init_backbone(spec: BackboneSpec, rng: np.random.Generator, weights: NetworkWeights | None = None) -> NetworkWeights:
    """Fresh backbone weights, uniform in +-sqrt(1/fan_in)."""
    w = weights if weights is not None else NetworkWeights()
    dt = np.float32 if spec.dtype == "f32" else np.float64
    in_ch = 3
    for b in range(1, N_BLOCKS + 1):
        fan = in_ch * 3 * 3
        w.add(f"conv{b}.weight", ROLE_BACKBONE, _uniform(rng, (N_FILTERS, in_ch, 3, 3), fan, dt))
        w.add(f"conv{b}.bias", ROLE_BACKBONE, _uniform(rng, (N_FILTERS,), fan, dt))
        in_ch = N_FILTERS
    fan = spec.flat_dim
    w.add("embed.weight", ROLE_BACKBONE, _uniform(rng, (spec.embedding_dim, spec.flat_dim), fan, dt))
    w.add("embed.bias", ROLE_BACKBONE, _uniform(rng, (spec.embedding_dim,), fan, dt))
    return w


def init_siamese(spec: BackboneSpec, rng: np.random.Generator) -> NetworkWeights:
    """Backbone plus a linear projection head for contrastive training."""
    w = init_backbone(spec, rng)
    d = spec.embedding_dim
    w.add("head.weight", ROLE_SIAMESE_HEAD, _uniform(rng, (d, d), d, _dt(spec)))
    w.add("head.bias", ROLE_SIAMESE_HEAD, _uniform(rng, (d,), d, _dt(spec)))
    return w


def init_fce(dim: int, rng: np.random.Generator, dtype, weights: NetworkWeights | None = None,
             scale: float = 1.0) -> NetworkWeights:
    """Bidirectional support encoder and attention query reader weights.

    `scale` shrinks the draws; because fce_support/fce_query add their LSTM
    outputs to the raw embeddings, a small scale starts the encoder near the
    identity map instead of a random perturbation of it.
    """
    w = weights if weights is not None else NetworkWeights()

    def u(shape, fan):
        t = _uniform(rng, shape, fan, dtype)
        if scale != 1.0:
            t.data *= scale
        return t

    for direction in ("fwd", "bwd"):
        w.add(f"fce_g.{direction}.wx", ROLE_FCE_G, u((4 * dim, dim), dim))
        w.add(f"fce_g.{direction}.wh", ROLE_FCE_G, u((4 * dim, dim), dim))
        w.add(f"fce_g.{direction}.b", ROLE_FCE_G, u((4 * dim,), dim))
    w.add("fce_f.wx", ROLE_FCE_F, u((4 * dim, dim), dim))
    w.add("fce_f.wh", ROLE_FCE_F, u((4 * dim, 2 * dim), 2 * dim))
    w.add("fce_f.b", ROLE_FCE_F, u((4 * dim,), dim))
    return w


def _dt(spec: BackboneSpec):
    return np.float32 if spec.dtype == "f32" else np.float64


def embed_backbone(images: Tensor, weights: NetworkWeights, spec: BackboneSpec) -> Tensor:
    """Images [B,3,S,S] -> embeddings [B, embedding_dim]."""
    if images.data.ndim != 4 or images.data.shape[1] != 3:
        raise ShapeError(f"expected images [B,3,S,S], got shape {images.data.shape}")
    s = images.data.shape[2]
    if s != spec.input_size or images.data.shape[3] != s:
        raise ShapeError(
            f"image size {images.data.shape[2:]} does not match backbone input_size {spec.input_size}"
        )
    x = images
    for b in range(1, N_BLOCKS + 1):
        x = conv2d(x, weights.get(f"conv{b}.weight"), weights.get(f"conv{b}.bias"), stride=1, pad=1)
        x = relu(x)
        x = maxpool2d(x, 2, 2)
    if spec.input_size == 224:
        x = mean(x, axis=(2, 3))
    else:
        x = reshape(x, (x.data.shape[0], spec.flat_dim))
    return linear(x, weights.get("embed.weight"), weights.get("embed.bias"))


def siamese_embed(images: Tensor, weights: NetworkWeights, spec: BackboneSpec) -> Tensor:
    """Backbone embedding refined by the contrastive projection head."""
    e = embed_backbone(images, weights, spec)
    return linear(e, weights.get("head.weight"), weights.get("head.bias"))


def siamese_forward_pair(img_a: Tensor, img_b: Tensor, weights: NetworkWeights, spec: BackboneSpec):
    """Both branches share the exact same weight tensors; returns
    (per-pair distance [B], (embeddings_a, embeddings_b))."""
    if img_a.data.shape != img_b.data.shape:
        raise ShapeError(f"pair image shapes differ: {img_a.data.shape} vs {img_b.data.shape}")
    ea = siamese_embed(img_a, weights, spec)
    eb = siamese_embed(img_b, weights, spec)
    return distance_euclidean(ea, eb), (ea, eb)


def contrastive_loss(distance: Tensor, same_label: Tensor, margin: float = 1.0) -> Tensor:
    """Mean of y*d^2 + (1-y)*max(0, margin-d)^2 over the batch."""
    if margin <= 0:
        raise ShapeError(f"margin must be positive, got {margin}")
    if distance.data.shape != same_label.data.shape:
        raise ShapeError(f"distance {distance.data.shape} and labels {same_label.data.shape} differ")
    if (distance.data < 0).any():
        raise ShapeError("distances must be non-negative")
    y = same_label
    pos = mul(y, mul(distance, distance))
    hinge = relu(add(neg(distance), margin))
    negv = mul(add(neg(y), 1.0), mul(hinge, hinge))
    return mean(add(pos, negv))


def _run_lstm(seq_rows, wx, wh, b, dim, dtype):
    """Unidirectional LSTM over a list of [1,D] rows; returns list of h."""
    h = zeros((1, dim), dtype=dtype)
    c = zeros((1, dim), dtype=dtype)
    outs = []
    for row in seq_rows:
        h, c = lstm_step(row, h, c, wx, wh, b)
        outs.append(h)
    return outs


def fce_support(support_emb: Tensor, weights: NetworkWeights) -> Tensor:
    """Contextualize support embeddings [M,D] with a bidirectional LSTM and
    a residual skip: out_i = h_fwd(i) + h_bwd(i) + emb_i."""
    m, d = support_emb.data.shape
    wx = weights.get("fce_g.fwd.wx")
    if wx.data.shape[0] != 4 * d:
        raise ShapeError(f"support dim {d} does not match encoder weights {wx.data.shape}")
    dtype = support_emb.dtype
    rows = [narrow(support_emb, 0, i, 1) for i in range(m)]
    fwd = _run_lstm(rows, wx, weights.get("fce_g.fwd.wh"), weights.get("fce_g.fwd.b"), d, dtype)
    bwd = _run_lstm(
        rows[::-1], weights.get("fce_g.bwd.wx"), weights.get("fce_g.bwd.wh"), weights.get("fce_g.bwd.b"), d, dtype
    )[::-1]
    ctx = add(concat(fwd, axis=0), concat(bwd, axis=0))
    return add(ctx, support_emb)


def fce_query(query_emb: Tensor, support_ctx: Tensor, weights: NetworkWeights, k_steps: int = 3) -> Tensor:
    """Refine query embeddings with an attention LSTM that reads the support
    context for `k_steps` steps. Accepts [D] or a batch [Q,D]; rows are
    independent queries."""
    if k_steps < 1:
        raise ShapeError(f"k_steps must be >= 1, got {k_steps}")
    single = query_emb.data.ndim == 1
    q = reshape(query_emb, (1, -1)) if single else query_emb
    nq, d = q.data.shape
    if support_ctx.data.shape[1] != d:
        raise ShapeError(f"query dim {d} does not match support context {support_ctx.data.shape}")
    wx = weights.get("fce_f.wx")
    wh = weights.get("fce_f.wh")
    b = weights.get("fce_f.b")
    if wx.data.shape[0] != 4 * d:
        raise ShapeError(f"query dim {d} does not match reader weights {wx.data.shape}")
    dtype = q.dtype
    h = zeros((nq, d), dtype=dtype)
    c = zeros((nq, d), dtype=dtype)
    readout = zeros((nq, d), dtype=dtype)
    sup_t = transpose(support_ctx)
    for _ in range(k_steps):
        h_hat, c = lstm_step(q, concat([h, readout], axis=1), c, wx, wh, b)
        h = add(h_hat, q)
        attn = softmax_rows(matmul(h, sup_t))
        readout = matmul(attn, support_ctx)
    return reshape(h, (d,)) if single else h


def matching_predict(query_ctx: Tensor, support_ctx: Tensor, support_onehot: Tensor) -> Tensor:
    """Cosine-attention label mixing.

    Attention over support items is the softmax of per-item cosine
    similarity to the query; the prediction is the attention-weighted sum
    of one-hot support labels. Accepts a single query [D] or a batch [Q,D];
    returns [N] or [Q,N], rows summing to 1.
    """
    single = query_ctx.data.ndim == 1
    q = reshape(query_ctx, (1, -1)) if single else query_ctx
    m, d = support_ctx.data.shape
    if q.data.shape[1] != d:
        raise ShapeError(f"query dim {q.data.shape} does not match support {support_ctx.data.shape}")
    if support_onehot.data.shape[0] != m:
        raise ShapeError(f"labels {support_onehot.data.shape} do not match support {support_ctx.data.shape}")
    nq = q.data.shape[0]
    sims = cosine_similarity(repeat_rows(q, m), tile_rows(support_ctx, nq))
    attn = softmax_rows(reshape(sims, (nq, m)))
    probs = matmul(attn, support_onehot)
    return reshape(probs, (support_onehot.data.shape[1],)) if single else probs


def check_backbone(weights: NetworkWeights, spec: BackboneSpec):
    """Reject weights whose embedding stack does not fit `spec`."""
    expect = {
        "conv1.weight": (N_FILTERS, 3, 3, 3),
        "embed.weight": (spec.embedding_dim, spec.flat_dim),
    }
    for name, shape in expect.items():
        got = weights.get(name).data.shape
        if got != shape:
            raise ShapeError(
                f"weights entry {name!r} has shape {got}; a {spec.input_size}px, "
                f"{spec.embedding_dim}-dim embedding stack needs {shape}")


def frozen_view(weights: NetworkWeights) -> NetworkWeights:
    """Same arrays, gradients cut: forward passes leave no graph on them."""
    out = NetworkWeights()
    for name, role, t in weights.entries:
        out.add(name, role, constant(t))
    return out


def ssm_embed(images: Tensor, siamese_weights: NetworkWeights, spec: BackboneSpec) -> Tensor:
    """Embed through the siamese extractor with gradients disabled; the
    extractor stays frozen inside the stacked model."""
    return siamese_embed(images, frozen_view(siamese_weights), spec)
