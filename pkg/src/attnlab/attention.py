"""Masked graph attention, its fully-connected degenerate form, and a
small transformer encoder, all with analytic forward/backward passes.

The graph-attention layer projects incoming node states, scores every
ordered neighbor pair with an additive attention vector through a
LeakyReLU, normalizes scores per node over its neighborhood only (masked
softmax with exact zeros outside the adjacency), and aggregates projected
neighbor states through a ReLU. Running the identical computation with an
all-ones adjacency is, by definition, the fully-connected self-attention
variant; ``self_attention_forward`` literally calls the masked code path
with an all-ones mask, so the equivalence is bitwise.

Internally every operation is batched over a leading axis; the public
single-example API wraps batch size 1. The trainer reuses the batched
internals directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, ValidationError
from .numerics import (
    Matrix,
    SeededRng,
    assert_finite,
    leaky_relu,
    leaky_relu_grad,
    relu,
    relu_grad_mask,
)


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask`` (boolean).

    Excluded entries are left out of both the max subtraction and the
    normalization, and come back as exact 0.0, not tiny floats.
    """
    if scores.shape != mask.shape:
        raise ShapeError(f"scores {scores.shape} vs mask {mask.shape}")
    if not mask.any(axis=-1).all():
        raise ValidationError("softmax row with empty support")
    rowmax = np.where(mask, scores, -np.inf).max(axis=-1, keepdims=True)
    out = np.zeros_like(scores)
    shifted = scores - rowmax
    out[mask] = np.exp(shifted[mask])
    out /= out.sum(axis=-1, keepdims=True)
    return out


# ---------------------------------------------------------------------------
# graph attention
# ---------------------------------------------------------------------------


@dataclass
class GraphAttentionParams:
    """Input projection, additive attention vector, LeakyReLU slope.

    ``attn_vec`` scores the concatenation [g_i, g_j] of two projected
    node states, so its length is twice the projection width.
    """

    proj: Matrix  # (d_in, d_out)
    attn_vec: np.ndarray  # (2 * d_out,)
    leaky_slope: float = 0.2

    def validate(self) -> "GraphAttentionParams":
        if self.proj.ndim != 2:
            raise ShapeError("proj must be 2-D")
        if self.attn_vec.ndim != 1 or self.attn_vec.size != 2 * self.proj.shape[1]:
            raise ShapeError(
                f"attn_vec length {self.attn_vec.size} != 2 x proj cols {self.proj.shape[1]}"
            )
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValidationError("leaky_slope must lie in (0, 1)")
        return self

    @property
    def d_in(self) -> int:
        return self.proj.shape[0]

    @property
    def d_out(self) -> int:
        return self.proj.shape[1]


def init_graph_attention_params(
    rng: SeededRng, d_in: int, d_out: int, leaky_slope: float = 0.2, scale: float | None = None
) -> GraphAttentionParams:
    if scale is None:
        scale = float(np.sqrt(2.0 / (d_in + d_out)))
    return GraphAttentionParams(
        proj=rng.normal((d_in, d_out), scale),
        attn_vec=rng.normal((2 * d_out,), scale),
        leaky_slope=leaky_slope,
    ).validate()


def identity_graph_attention_params(d: int, leaky_slope: float = 0.2) -> GraphAttentionParams:
    """Projection fixed to the identity: the layer aggregates raw states."""
    return GraphAttentionParams(
        proj=np.eye(d, dtype=np.float64),
        attn_vec=np.zeros(2 * d, dtype=np.float64),
        leaky_slope=leaky_slope,
    )


@dataclass
class GraphAttentionCache:
    H: np.ndarray
    mask: np.ndarray
    g: np.ndarray
    pre: np.ndarray
    alpha: np.ndarray
    agg: np.ndarray
    params: GraphAttentionParams


def _check_adjacency(adj: np.ndarray) -> np.ndarray:
    if adj.shape[-1] != adj.shape[-2]:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    vals = np.unique(adj)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValidationError("adjacency entries must be 0 or 1")
    diag = np.diagonal(adj, axis1=-2, axis2=-1)
    if not np.all(diag == 1.0):
        raise ValidationError("adjacency diagonal must be all ones (self-loops)")
    if not np.array_equal(adj, np.swapaxes(adj, -1, -2)):
        raise ValidationError("adjacency must be symmetric")
    return adj


def graph_attention_batch_forward(
    H: np.ndarray, adjacency: np.ndarray, params: GraphAttentionParams
) -> tuple[np.ndarray, np.ndarray, GraphAttentionCache]:
    """Batched masked attention. H: (B, N, d_in), adjacency: (B, N, N)."""
    params.validate()
    if H.ndim != 3 or adjacency.ndim != 3:
        raise ShapeError("batched inputs must have a leading batch axis")
    if H.shape[1] != adjacency.shape[1] or adjacency.shape[0] != H.shape[0]:
        raise ShapeError(f"node counts differ: H {H.shape}, adjacency {adjacency.shape}")
    if H.shape[2] != params.d_in:
        raise ShapeError(f"state width {H.shape[2]} != proj rows {params.d_in}")
    _check_adjacency(adjacency)
    assert_finite(H, "node states")

    d_out = params.d_out
    a_src = params.attn_vec[:d_out]
    a_dst = params.attn_vec[d_out:]
    b, n, d_in = H.shape
    g = (H.reshape(-1, d_in) @ params.proj).reshape(b, n, d_out)
    src = g @ a_src  # (B, N)
    dst = g @ a_dst  # (B, N)
    pre = src[:, :, None] + dst[:, None, :]  # (B, N, N)
    beta = leaky_relu(pre, params.leaky_slope)
    mask = adjacency > 0.5
    alpha = masked_softmax(beta, mask)
    agg = alpha @ g  # (B, N, d_out)
    out = relu(agg)
    cache = GraphAttentionCache(H=H, mask=mask, g=g, pre=pre, alpha=alpha, agg=agg, params=params)
    return out, alpha, cache


def graph_attention_batch_backward(
    cache: GraphAttentionCache, d_out_states: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dH, d_proj, d_attn_vec) for the batched forward."""
    p = cache.params
    if d_out_states.shape != cache.agg.shape:
        raise ShapeError(
            f"cotangent shape {d_out_states.shape} != output shape {cache.agg.shape}"
        )
    dW = p.d_out
    a_src = p.attn_vec[:dW]
    a_dst = p.attn_vec[dW:]

    d_agg = d_out_states * relu_grad_mask(cache.agg)
    d_alpha = d_agg @ cache.g.transpose(0, 2, 1)
    dg = cache.alpha.transpose(0, 2, 1) @ d_agg

    # masked softmax backward; rows of alpha are zero off-mask, so d_beta is too
    rho = np.sum(cache.alpha * d_alpha, axis=-1, keepdims=True)
    d_beta = cache.alpha * (d_alpha - rho)
    d_pre = d_beta * leaky_relu_grad(cache.pre, p.leaky_slope)

    d_src = d_pre.sum(axis=-1)  # (B, N)
    d_dst = d_pre.sum(axis=-2)  # (B, N)
    g_flat = cache.g.reshape(-1, dW)
    d_a_src = d_src.reshape(-1) @ g_flat
    d_a_dst = d_dst.reshape(-1) @ g_flat
    dg += d_src[:, :, None] * a_src + d_dst[:, :, None] * a_dst

    b, n, d_in = cache.H.shape
    dg_flat = dg.reshape(-1, dW)
    d_proj = cache.H.reshape(-1, d_in).T @ dg_flat
    dH = (dg_flat @ p.proj.T).reshape(b, n, d_in)
    return dH, d_proj, np.concatenate([d_a_src, d_a_dst])


def graph_attention_forward(
    H: Matrix, adjacency: Matrix, params: GraphAttentionParams
) -> tuple[Matrix, Matrix, GraphAttentionCache]:
    """Single-example masked attention over an (N, d_in) state matrix.

    Returns updated states (N, d_out), the row-stochastic attention matrix
    (exact zeros outside the adjacency), and the cache for backward.
    """
    H = np.asarray(H, dtype=np.float64)
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if H.ndim != 2 or adjacency.ndim != 2:
        raise ShapeError("expected 2-D node states and adjacency")
    out, alpha, cache = graph_attention_batch_forward(H[None], adjacency[None], params)
    return out[0], alpha[0], cache


def self_attention_forward(
    H: Matrix, params: GraphAttentionParams
) -> tuple[Matrix, Matrix, GraphAttentionCache]:
    """The fully-connected case: identical computation, all-ones adjacency."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2:
        raise ShapeError("expected 2-D node states")
    n = H.shape[0]
    return graph_attention_forward(H, np.ones((n, n)), params)


def graph_attention_backward(
    cache: GraphAttentionCache, d_out_states: Matrix
) -> tuple[Matrix, Matrix, np.ndarray]:
    """Single-example analytic gradients (dH, d_proj, d_attn_vec)."""
    d_out_states = np.asarray(d_out_states, dtype=np.float64)
    if d_out_states.ndim != 2:
        raise ShapeError("expected a 2-D cotangent")
    dH, d_proj, d_vec = graph_attention_batch_backward(cache, d_out_states[None])
    return dH[0], d_proj, d_vec


# ---------------------------------------------------------------------------
# transformer encoder
# ---------------------------------------------------------------------------

LN_EPS = 1e-5


@dataclass
class TransformerLayerParams:
    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    w1: Matrix
    b1: np.ndarray
    w2: Matrix
    b2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo,
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "ln1_gain": self.ln1_gain, "ln1_bias": self.ln1_bias,
            "ln2_gain": self.ln2_gain, "ln2_bias": self.ln2_bias,
        }


@dataclass
class TransformerParams:
    layers: list[TransformerLayerParams]
    model_dim: int
    num_heads: int
    pre_norm: bool = False

    def validate(self) -> "TransformerParams":
        if not self.layers:
            raise ValidationError("need at least one layer")
        if self.model_dim % self.num_heads != 0:
            raise ValidationError(
                f"head count {self.num_heads} must divide model_dim {self.model_dim}"
            )
        for lp in self.layers:
            if lp.wq.shape != (self.model_dim, self.model_dim):
                raise ShapeError("attention projections must be (model_dim, model_dim)")
        return self

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def init_transformer_params(
    rng: SeededRng,
    num_layers: int,
    model_dim: int,
    num_heads: int,
    ffn_dim: int | None = None,
    pre_norm: bool = False,
) -> TransformerParams:
    if ffn_dim is None:
        ffn_dim = model_dim
    d = model_dim
    proj_scale = float(np.sqrt(1.0 / d))
    ffn_scale = float(np.sqrt(2.0 / (d + ffn_dim)))
    layers = []
    for _ in range(num_layers):
        layers.append(
            TransformerLayerParams(
                wq=rng.normal((d, d), proj_scale),
                wk=rng.normal((d, d), proj_scale),
                wv=rng.normal((d, d), proj_scale),
                wo=rng.normal((d, d), proj_scale),
                w1=rng.normal((d, ffn_dim), ffn_scale),
                b1=np.zeros(ffn_dim),
                w2=rng.normal((ffn_dim, d), ffn_scale),
                b2=np.zeros(d),
                ln1_gain=np.ones(d),
                ln1_bias=np.zeros(d),
                ln2_gain=np.ones(d),
                ln2_bias=np.zeros(d),
            )
        )
    return TransformerParams(
        layers=layers, model_dim=d, num_heads=num_heads, pre_norm=pre_norm
    ).validate()


def _layernorm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gain * xhat + bias, (xhat, inv_std, gain)


def _layernorm_backward(dy, ln_cache):
    xhat, inv_std, gain = ln_cache
    d_gain = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    d_bias = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gain, d_bias


def _split_heads(x, num_heads):
    b, l, d = x.shape
    return x.reshape(b, l, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def _flat_mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(..., a) @ (a, b) through a single 2-D GEMM."""
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[1])


def _outer_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Weight gradient for y = x @ w, summed over all leading axes."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _mha_forward(x, lp: TransformerLayerParams, num_heads, key_keep):
    """key_keep: (B, L) boolean, False for padded positions."""
    scale = 1.0 / np.sqrt(x.shape[-1] // num_heads)
    q = _split_heads(_flat_mm(x, lp.wq), num_heads)
    k = _split_heads(_flat_mm(x, lp.wk), num_heads)
    v = _split_heads(_flat_mm(x, lp.wv), num_heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    mask = np.broadcast_to(key_keep[:, None, None, :], scores.shape)
    alpha = masked_softmax(scores, mask)
    ctx = alpha @ v
    merged = _merge_heads(ctx)
    out = _flat_mm(merged, lp.wo)
    return out, alpha, (x, q, k, v, alpha, merged, scale)


def _mha_backward(d_out, mha_cache, lp: TransformerLayerParams, num_heads):
    x, q, k, v, alpha, merged, scale = mha_cache
    d_wo = _outer_grad(merged, d_out)
    d_merged = _flat_mm(d_out, lp.wo.T)
    d_ctx = _split_heads(d_merged, num_heads)
    d_alpha = d_ctx @ v.transpose(0, 1, 3, 2)
    dv = alpha.transpose(0, 1, 3, 2) @ d_ctx
    rho = np.sum(alpha * d_alpha, axis=-1, keepdims=True)
    d_scores = alpha * (d_alpha - rho)
    dq = (d_scores @ k) * scale
    dk = (d_scores.transpose(0, 1, 3, 2) @ q) * scale
    dqm, dkm, dvm = (_merge_heads(a) for a in (dq, dk, dv))
    d_wq = _outer_grad(x, dqm)
    d_wk = _outer_grad(x, dkm)
    d_wv = _outer_grad(x, dvm)
    dx = _flat_mm(dqm, lp.wq.T) + _flat_mm(dkm, lp.wk.T) + _flat_mm(dvm, lp.wv.T)
    return dx, {"wq": d_wq, "wk": d_wk, "wv": d_wv, "wo": d_wo}


def _ffn_forward(x, lp: TransformerLayerParams):
    pre = _flat_mm(x, lp.w1) + lp.b1
    hidden = relu(pre)
    return _flat_mm(hidden, lp.w2) + lp.b2, (x, pre, hidden)


def _ffn_backward(d_out, ffn_cache, lp: TransformerLayerParams):
    x, pre, hidden = ffn_cache
    d_w2 = _outer_grad(hidden, d_out)
    d_b2 = d_out.sum(axis=(0, 1))
    d_hidden = _flat_mm(d_out, lp.w2.T)
    d_pre = d_hidden * relu_grad_mask(pre)
    d_w1 = _outer_grad(x, d_pre)
    d_b1 = d_pre.sum(axis=(0, 1))
    dx = _flat_mm(d_pre, lp.w1.T)
    return dx, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}


def transformer_batch_forward(
    X: np.ndarray, params: TransformerParams, pad_mask: Optional[np.ndarray] = None
) -> tuple[np.ndarray, list[np.ndarray], list]:
    """Encoder stack over (B, L, model_dim). pad_mask: (B, L), True = padded.

    Returns final states, per-layer attention traces (B, heads, L, L) that
    are row-stochastic over unpadded keys, and the backward cache.
    """
    params.validate()
    if X.ndim != 3 or X.shape[-1] != params.model_dim:
        raise ShapeError(f"expected (B, L, {params.model_dim}) input, got {X.shape}")
    assert_finite(X, "transformer input")
    b, l, _ = X.shape
    if pad_mask is None:
        key_keep = np.ones((b, l), dtype=bool)
    else:
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.shape != (b, l):
            raise ShapeError(f"pad_mask shape {pad_mask.shape} != {(b, l)}")
        key_keep = ~pad_mask

    traces = []
    layer_caches = []
    x = X
    for lp in params.layers:
        if params.pre_norm:
            n1, ln1c = _layernorm_forward(x, lp.ln1_gain, lp.ln1_bias)
            a_out, alpha, mha_c = _mha_forward(n1, lp, params.num_heads, key_keep)
            x1 = x + a_out
            n2, ln2c = _layernorm_forward(x1, lp.ln2_gain, lp.ln2_bias)
            f_out, ffn_c = _ffn_forward(n2, lp)
            x_next = x1 + f_out
        else:
            a_out, alpha, mha_c = _mha_forward(x, lp, params.num_heads, key_keep)
            x1, ln1c = _layernorm_forward(x + a_out, lp.ln1_gain, lp.ln1_bias)
            f_out, ffn_c = _ffn_forward(x1, lp)
            x_next, ln2c = _layernorm_forward(x1 + f_out, lp.ln2_gain, lp.ln2_bias)
        traces.append(alpha)
        layer_caches.append((mha_c, ln1c, ffn_c, ln2c))
        x = x_next
    return x, traces, [params, layer_caches]


def transformer_batch_backward(cache, d_out: np.ndarray):
    """Returns (dX, per-layer dict of parameter gradients)."""
    params, layer_caches = cache
    grads: list[dict[str, np.ndarray]] = []
    dx = d_out
    for lp, (mha_c, ln1c, ffn_c, ln2c) in zip(
        reversed(params.layers), reversed(layer_caches)
    ):
        g: dict[str, np.ndarray] = {}
        if params.pre_norm:
            # x_next = x1 + ffn(ln2(x1));  x1 = x + mha(ln1(x))
            d_n2, ffn_g = _ffn_backward(dx, ffn_c, lp)
            g.update(ffn_g)
            d_ln2_in, g["ln2_gain"], g["ln2_bias"] = _layernorm_backward(d_n2, ln2c)
            d_x1 = dx + d_ln2_in
            d_n1, mha_g = _mha_backward(d_x1, mha_c, lp, params.num_heads)
            g.update(mha_g)
            d_ln1_in, g["ln1_gain"], g["ln1_bias"] = _layernorm_backward(d_n1, ln1c)
            dx = d_x1 + d_ln1_in
        else:
            # x_next = ln2(x1 + ffn(x1))
            d_r2, g["ln2_gain"], g["ln2_bias"] = _layernorm_backward(dx, ln2c)
            d_x1 = d_r2.copy()
            d_ffn_in, ffn_g = _ffn_backward(d_r2, ffn_c, lp)
            g.update(ffn_g)
            d_x1 += d_ffn_in
            # x1 = ln1(x + mha(x))
            d_r1, g["ln1_gain"], g["ln1_bias"] = _layernorm_backward(d_x1, ln1c)
            dx = d_r1.copy()
            d_mha_in, mha_g = _mha_backward(d_r1, mha_c, lp, params.num_heads)
            g.update(mha_g)
            dx += d_mha_in
        grads.append(g)
    grads.reverse()
    return dx, grads


def transformer_forward(
    X: Matrix, params: TransformerParams, pad_mask=None
) -> tuple[Matrix, list[np.ndarray], list]:
    """Single-example encoder: X is (L, model_dim), pad_mask length L."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("expected a 2-D token matrix")
    pm = None if pad_mask is None else np.asarray(pad_mask, dtype=bool)[None]
    out, traces, cache = transformer_batch_forward(X[None], params, pm)
    return out[0], [t[0] for t in traces], cache


def transformer_backward(cache, d_out: Matrix):
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.ndim != 2:
        raise ShapeError("expected a 2-D cotangent")
    dx, grads = transformer_batch_backward(cache, d_out[None])
    return dx[0], grads
