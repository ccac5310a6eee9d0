"""Token/node bridging and the hop loop that alternates between them.

One hop pools token representations into per-entity node states
(mean-max over each entity's token span, giving width 2d), updates the
nodes with masked graph attention, and writes the updated nodes back
onto the token sequence: each token receives the average of the node
states covering it (zero when no entity covers it), is concatenated with
its current representation, and passes through a learned ReLU mixing
layer. Tokens outside every entity span therefore still flow through the
mixer, just with a zero node summary.

Everything is batched over a leading axis like the attention module;
batched calls require the span layout to be shared across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import (
    GraphAttentionCache,
    GraphAttentionParams,
    graph_attention_batch_backward,
    graph_attention_batch_forward,
)
from .entity_graph import ContextExample, EntityGraph
from .errors import ShapeError, ValidationError
from .numerics import Matrix, SeededRng, relu, relu_grad_mask


class SpanAssignment:
    """Entity token ranges plus the derived token-to-entity incidence."""

    def __init__(self, spans: Sequence[tuple[int, int]], num_tokens: int):
        self.spans = [(int(s), int(e)) for s, e in spans]
        self.num_tokens = int(num_tokens)
        for k, (s, e) in enumerate(self.spans):
            if e <= s:
                raise ValidationError(f"entity {k}: empty token range [{s}, {e})")
            if not (0 <= s and e <= self.num_tokens):
                raise ValidationError(
                    f"entity {k}: range [{s}, {e}) outside [0, {self.num_tokens})"
                )
        n = len(self.spans)
        avg = np.zeros((self.num_tokens, n))
        for i, (s, e) in enumerate(self.spans):
            avg[s:e, i] = 1.0
        cover = avg.sum(axis=1, keepdims=True)
        np.divide(avg, cover, out=avg, where=cover > 0.0)
        # row t averages the node states of entities covering token t
        self.averaging = avg

    @property
    def num_entities(self) -> int:
        return len(self.spans)

    @classmethod
    def from_example(cls, example: ContextExample) -> "SpanAssignment":
        return cls([(sp.start, sp.end) for sp in example.entity_spans], len(example.tokens))


# ---------------------------------------------------------------------------
# mean-max pooling: tokens -> nodes
# ---------------------------------------------------------------------------


def pool_batch_forward(C: np.ndarray, assignment: SpanAssignment):
    """(B, L, d) tokens -> (B, N, 2d) mean-max node states."""
    if C.ndim != 3:
        raise ShapeError("expected (B, L, d) tokens")
    if C.shape[1] != assignment.num_tokens:
        raise ShapeError(f"token count {C.shape[1]} != assignment {assignment.num_tokens}")
    b, _, d = C.shape
    n = assignment.num_entities
    out = np.empty((b, n, 2 * d))
    argmaxes = []
    for i, (s, e) in enumerate(assignment.spans):
        block = C[:, s:e, :]
        out[:, i, :d] = block.mean(axis=1)
        idx = block.argmax(axis=1)  # first maximizer on ties
        out[:, i, d:] = np.take_along_axis(block, idx[:, None, :], axis=1)[:, 0, :]
        argmaxes.append(idx)
    return out, (C, assignment, argmaxes)


def pool_batch_backward(cache, d_nodes: np.ndarray) -> np.ndarray:
    C_in, assignment, argmaxes = cache
    b, l, d = C_in.shape
    shape = C_in.shape
    if d_nodes.shape != (b, assignment.num_entities, 2 * d):
        raise ShapeError(f"cotangent shape {d_nodes.shape} unexpected")
    dC = np.zeros(shape)
    for i, (s, e) in enumerate(assignment.spans):
        width = e - s
        dC[:, s:e, :] += d_nodes[:, i, :d][:, None, :] / width
        scatter = np.zeros((b, width, d))
        np.put_along_axis(scatter, argmaxes[i][:, None, :], d_nodes[:, i, d:][:, None, :], axis=1)
        dC[:, s:e, :] += scatter
    return dC


def tok2graph_meanmax(C: Matrix, assignment: SpanAssignment):
    """Single example: (L, d) tokens -> (N, 2d) nodes, plus backward cache."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ShapeError("expected a 2-D token matrix")
    out, cache = pool_batch_forward(C[None], assignment)
    return out[0], cache


def tok2graph_backward(cache, d_nodes: Matrix) -> Matrix:
    d_nodes = np.asarray(d_nodes, dtype=np.float64)
    return pool_batch_backward(cache, d_nodes[None])[0]


# ---------------------------------------------------------------------------
# back-projection: nodes -> tokens
# ---------------------------------------------------------------------------


def unpool_batch_forward(
    C: np.ndarray, nodes: np.ndarray, assignment: SpanAssignment, mix: Matrix
):
    """(B, L, d), (B, N, w) -> (B, L, d) through concat + ReLU mixing."""
    if C.ndim != 3 or nodes.ndim != 3:
        raise ShapeError("expected batched token and node states")
    d = C.shape[2]
    w = nodes.shape[2]
    if mix.shape != (d + w, d):
        raise ShapeError(f"mix must be ({d + w}, {d}), got {mix.shape}")
    if nodes.shape[1] != assignment.num_entities:
        raise ShapeError("node count disagrees with span assignment")
    summary = np.matmul(assignment.averaging, nodes)  # (L,N) @ (B,N,w)
    concat = np.concatenate([C, summary], axis=-1)
    b, l, c = concat.shape
    pre = (concat.reshape(-1, c) @ mix).reshape(b, l, d)
    return relu(pre), (concat, pre, mix, assignment, d)


def unpool_batch_backward(cache, d_out: np.ndarray):
    concat, pre, mix, assignment, d = cache
    b, l, c = concat.shape
    d_pre = d_out * relu_grad_mask(pre)
    d_pre_flat = d_pre.reshape(-1, d)
    d_mix = concat.reshape(-1, c).T @ d_pre_flat
    d_concat = (d_pre_flat @ mix.T).reshape(b, l, c)
    dC = d_concat[..., :d]
    d_nodes = np.matmul(assignment.averaging.T, d_concat[..., d:])
    return dC, d_nodes, d_mix


def graph2doc(C: Matrix, nodes: Matrix, assignment: SpanAssignment, mix: Matrix):
    """Single example back-projection; returns (tokens, cache)."""
    C = np.asarray(C, dtype=np.float64)
    nodes = np.asarray(nodes, dtype=np.float64)
    if C.ndim != 2 or nodes.ndim != 2:
        raise ShapeError("expected 2-D token and node matrices")
    out, cache = unpool_batch_forward(C[None], nodes[None], assignment, mix)
    return out[0], cache


def graph2doc_backward(cache, d_out: Matrix):
    d_out = np.asarray(d_out, dtype=np.float64)
    dC, d_nodes, d_mix = unpool_batch_backward(cache, d_out[None])
    return dC[0], d_nodes[0], d_mix


# ---------------------------------------------------------------------------
# the hop loop
# ---------------------------------------------------------------------------


@dataclass
class FusionParams:
    """One hop's weights: the attention layer plus the token mixer."""

    attention: GraphAttentionParams
    mix: Matrix

    def validate(self) -> "FusionParams":
        self.attention.validate()
        d = self.mix.shape[1]
        if self.attention.d_in != 2 * d:
            raise ShapeError(
                f"attention expects width {self.attention.d_in}, pooling provides {2 * d}"
            )
        if self.mix.shape[0] != d + self.attention.d_out:
            raise ShapeError(
                f"mix rows {self.mix.shape[0]} != token dim {d} + node dim {self.attention.d_out}"
            )
        return self


def init_fusion_params(
    rng: SeededRng, token_dim: int, node_dim: int, leaky_slope: float = 0.2
) -> FusionParams:
    from .attention import init_graph_attention_params

    att = init_graph_attention_params(rng.split(0), 2 * token_dim, node_dim, leaky_slope)
    mix_scale = float(np.sqrt(2.0 / (token_dim + node_dim + token_dim)))
    mix = rng.split(1).normal((token_dim + node_dim, token_dim), mix_scale)
    return FusionParams(attention=att, mix=mix).validate()


def _hop_params(params, hops: int) -> list[FusionParams]:
    if isinstance(params, FusionParams):
        return [params] * hops
    params = list(params)
    if len(params) != hops:
        raise ShapeError(f"got {len(params)} hop parameter sets for {hops} hops")
    return params


def fusion_batch_forward(
    C: np.ndarray,
    adjacency: np.ndarray,
    assignment: SpanAssignment,
    params,
    hops: int,
    fully_connected: bool = False,
):
    """Run ``hops`` rounds of pool -> attend -> back-project, batched.

    ``params`` is a single FusionParams (weights shared across hops) or a
    sequence with one entry per hop. With ``fully_connected`` the
    adjacency is replaced by all-ones, the degenerate unmasked case.
    """
    if hops < 1:
        raise ValidationError("hop count must be >= 1")
    plist = [p.validate() for p in _hop_params(params, hops)]
    adj = np.ones_like(adjacency) if fully_connected else adjacency
    traces = []
    hop_caches = []
    x = C
    for p in plist:
        nodes, pool_c = pool_batch_forward(x, assignment)
        upd, alpha, att_c = graph_attention_batch_forward(nodes, adj, p.attention)
        x, unpool_c = unpool_batch_forward(x, upd, assignment, p.mix)
        traces.append(alpha)
        hop_caches.append((pool_c, att_c, unpool_c))
    shared = isinstance(params, FusionParams)
    return x, traces, (hop_caches, plist, shared)


def fusion_batch_backward(cache, d_out: np.ndarray):
    """Returns (dC, grads) where grads is one dict per hop parameter set
    (a single summed dict when the forward shared one set across hops)."""
    hop_caches, plist, shared = cache
    per_hop = []
    dx = d_out
    for pool_c, att_c, unpool_c in reversed(hop_caches):
        dC_direct, d_nodes_upd, d_mix = unpool_batch_backward(unpool_c, dx)
        d_nodes, d_proj, d_vec = graph_attention_batch_backward(att_c, d_nodes_upd)
        dx = dC_direct + pool_batch_backward(pool_c, d_nodes)
        per_hop.append({"proj": d_proj, "attn_vec": d_vec, "mix": d_mix})
    per_hop.reverse()
    if shared:
        total = per_hop[0]
        for g in per_hop[1:]:
            for k in total:
                total[k] = total[k] + g[k]
        return dx, total
    return dx, per_hop


def fusion_block_forward(
    C0: Matrix,
    graph: EntityGraph,
    assignment: SpanAssignment,
    params,
    hops: int,
    fully_connected: bool = False,
):
    """Single-example hop loop; returns (tokens, per-hop traces, cache)."""
    C0 = np.asarray(C0, dtype=np.float64)
    if C0.ndim != 2:
        raise ShapeError("expected a 2-D token matrix")
    if graph.n != assignment.num_entities:
        raise ShapeError("graph node count disagrees with span assignment")
    out, traces, cache = fusion_batch_forward(
        C0[None], graph.adjacency[None], assignment, params, hops, fully_connected
    )
    return out[0], [t[0] for t in traces], cache


def fusion_block_backward(cache, d_out: Matrix):
    d_out = np.asarray(d_out, dtype=np.float64)
    dC, grads = fusion_batch_backward(cache, d_out[None])
    return dC[0], grads
