"""Executable verification suites: the fully-connected degeneracy check
and finite-difference gradient checks for every analytic backward pass.

These back the ``equivalence-check`` and ``gradcheck`` CLI subcommands
and the acceptance tests. Gradient checks compare packed analytic
gradients against ``finite_diff_grad`` with a norm-based relative error;
instances are resampled until every activation preimage sits safely away
from its kink so central differences stay clean.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .attention import (
    GraphAttentionParams,
    graph_attention_backward,
    graph_attention_forward,
    init_graph_attention_params,
    init_transformer_params,
    self_attention_forward,
    transformer_backward,
    transformer_forward,
)
from .errors import NumericError
from .fusion import (
    FusionParams,
    SpanAssignment,
    fusion_block_backward,
    fusion_block_forward,
    graph2doc,
    graph2doc_backward,
)
from .entity_graph import EntityGraph
from .numerics import SeededRng, finite_diff_grad, relative_error
from .reference import loop_graph_attention

KINK_GUARD = 1e-4  # min distance of any ReLU/LeakyReLU preimage from 0
MAX_RESAMPLE = 500


def _random_adjacency(rng: SeededRng, n: int) -> np.ndarray:
    adj = (rng.uniform((n, n)) < 0.6).astype(np.float64)
    adj = np.maximum(adj, adj.T)
    np.fill_diagonal(adj, 1.0)
    return adj


def _pack(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def _unpack(vec: np.ndarray, templates):
    out = []
    pos = 0
    for t in templates:
        size = int(np.prod(t.shape)) if t.shape else 1
        out.append(vec[pos : pos + size].reshape(t.shape))
        pos += size
    return out


# ---------------------------------------------------------------------------
# degeneracy suite
# ---------------------------------------------------------------------------


def degeneracy_suite(
    instances: int = 1000,
    seed: int = 2024,
    max_nodes: int = 32,
    max_dim: int = 16,
    loop_instances: int = 100,
) -> dict:
    """Fully-connected masked attention vs. the self-attention entry point.

    Also cross-checks the first ``loop_instances`` cases against the
    plain-loop reference evaluator. Returns max deviations and runtime.
    """
    rng = SeededRng(seed)
    started = time.perf_counter()
    max_pair = 0.0
    max_loop = 0.0
    for case in range(instances):
        n = int(rng.integers(1, max_nodes + 1))
        d_in = int(rng.integers(1, max_dim + 1))
        d_out = int(rng.integers(1, max_dim + 1))
        H = rng.normal((n, d_in))
        params = init_graph_attention_params(rng.split(case), d_in, d_out)
        ones = np.ones((n, n))
        out_masked, alpha_masked, _ = graph_attention_forward(H, ones, params)
        out_self, alpha_self, _ = self_attention_forward(H, params)
        max_pair = max(
            max_pair,
            float(np.abs(out_masked - out_self).max(initial=0.0)),
            float(np.abs(alpha_masked - alpha_self).max(initial=0.0)),
        )
        if case < loop_instances:
            ref_out, ref_alpha = loop_graph_attention(
                H, ones, params.proj, params.attn_vec, params.leaky_slope
            )
            max_loop = max(
                max_loop,
                float(np.abs(ref_out - out_self).max(initial=0.0)),
                float(np.abs(ref_alpha - alpha_self).max(initial=0.0)),
            )
    return {
        "instances": instances,
        "loop_instances": loop_instances,
        "max_pair_deviation": max_pair,
        "max_loop_deviation": max_loop,
        "seconds": time.perf_counter() - started,
    }


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


def _check_case(build: Callable[[SeededRng], tuple], rng: SeededRng, eps: float) -> float:
    """build(rng) -> (templates, loss_and_grad, loss_only) or None to resample."""
    for attempt in range(MAX_RESAMPLE):
        case = build(rng.split(attempt))
        if case is None:
            continue
        theta0, analytic, loss_fn = case
        fd = finite_diff_grad(loss_fn, theta0, eps)
        return relative_error(analytic, fd)
    raise NumericError("could not sample an instance clear of activation kinks")


def _clear_of_kinks(*arrays: np.ndarray) -> bool:
    return all(np.abs(a).min(initial=np.inf) > KINK_GUARD for a in arrays)


def _pool_tie_free(C: np.ndarray, spans) -> bool:
    """C: (B, L, d). True when every span's max is clear of its runner-up."""
    for s, e in spans:
        if e - s < 2:
            continue
        block = np.sort(C[:, s:e, :], axis=1)
        if (block[:, -1, :] - block[:, -2, :]).min() < KINK_GUARD:
            return False
    return True


def gradcheck_graph_attention(instances: int = 100, seed: int = 7, eps: float = 1e-5) -> float:
    """Max relative error of the analytic gradients over random cases."""
    rng = SeededRng(seed)
    worst = 0.0
    for case in range(instances):
        def build(r: SeededRng):
            n = int(r.integers(2, 6))
            d_in = int(r.integers(2, 5))
            d_out = int(r.integers(2, 5))
            H = r.normal((n, d_in))
            adj = _random_adjacency(r, n)
            params = init_graph_attention_params(r.split(1), d_in, d_out)
            weights = r.normal((n, d_out))
            out, _, cache = graph_attention_forward(H, adj, params)
            if not _clear_of_kinks(cache.pre[0], cache.agg[0]):
                return None
            dH, d_proj, d_vec = graph_attention_backward(cache, weights)
            analytic = _pack([dH, d_proj, d_vec])
            templates = [H, params.proj, params.attn_vec]
            theta0 = _pack(templates)

            def loss(theta: np.ndarray) -> float:
                h, proj, vec = _unpack(theta, templates)
                p = GraphAttentionParams(proj=proj, attn_vec=vec, leaky_slope=params.leaky_slope)
                o, _, _ = graph_attention_forward(h, adj, p)
                return float((weights * o).sum())

            return theta0, analytic, loss

        worst = max(worst, _check_case(build, rng.split(case), eps))
    return worst


def gradcheck_graph2doc(instances: int = 100, seed: int = 8, eps: float = 1e-5) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for case in range(instances):
        def build(r: SeededRng):
            l = int(r.integers(4, 9))
            d = int(r.integers(2, 4))
            w = int(r.integers(2, 4))
            spans = _random_spans(r, l)
            if not spans:
                return None
            asg = SpanAssignment(spans, l)
            C = r.normal((l, d))
            nodes = r.normal((len(spans), w))
            mix = r.normal((d + w, d))
            weights = r.normal((l, d))
            out, cache = graph2doc(C, nodes, asg, mix)
            if not _clear_of_kinks(cache[1][0]):  # mixer preactivations
                return None
            dC, d_nodes, d_mix = graph2doc_backward(cache, weights)
            analytic = _pack([dC, d_nodes, d_mix])
            templates = [C, nodes, mix]
            theta0 = _pack(templates)

            def loss(theta: np.ndarray) -> float:
                c, nd, mx = _unpack(theta, templates)
                o, _ = graph2doc(c, nd, asg, mx)
                return float((weights * o).sum())

            return theta0, analytic, loss

        worst = max(worst, _check_case(build, rng.split(case), eps))
    return worst


def _random_spans(rng: SeededRng, num_tokens: int) -> list[tuple[int, int]]:
    spans = []
    pos = 0
    while pos < num_tokens - 1 and len(spans) < 4:
        if rng.random() < 0.7:
            width = int(rng.integers(1, min(3, num_tokens - pos) + 1))
            spans.append((pos, pos + width))
            pos += width
        else:
            pos += 1
    return spans


def gradcheck_fusion(
    instances: int = 100, seed: int = 9, eps: float = 1e-5, hops: int = 2
) -> float:
    """Full hop loop with shared weights across hops; 12 tokens, 3 entities."""
    rng = SeededRng(seed)
    worst = 0.0
    for case in range(instances):
        def build(r: SeededRng):
            l, d, w = 12, 3, 3
            spans = [(0, 2), (4, 5), (7, 10)]
            asg = SpanAssignment(spans, l)
            n = len(spans)
            adj = _random_adjacency(r, n)
            graph = EntityGraph(n=n, mentions=[""] * n, adjacency=adj)
            C0 = r.normal((l, d))
            params = FusionParams(
                attention=init_graph_attention_params(r.split(1), 2 * d, w),
                mix=r.normal((d + w, d)),
            )
            weights = r.normal((l, d))
            out, _, cache = fusion_block_forward(C0, graph, asg, params, hops)
            hop_caches = cache[0]
            for pool_c, att_c, unpool_c in hop_caches:
                if not _clear_of_kinks(att_c.pre[0], att_c.agg[0], unpool_c[1][0]):
                    return None
                if not _pool_tie_free(pool_c[0], spans):
                    return None
            dC0, grads = fusion_block_backward(cache, weights)
            analytic = _pack([dC0, grads["proj"], grads["attn_vec"], grads["mix"]])
            templates = [C0, params.attention.proj, params.attention.attn_vec, params.mix]
            theta0 = _pack(templates)

            def loss(theta: np.ndarray) -> float:
                c0, proj, vec, mix = _unpack(theta, templates)
                p = FusionParams(
                    attention=GraphAttentionParams(proj=proj, attn_vec=vec), mix=mix
                )
                o, _, _ = fusion_block_forward(c0, graph, asg, p, hops)
                return float((weights * o).sum())

            return theta0, analytic, loss

        worst = max(worst, _check_case(build, rng.split(case), eps))
    return worst


def gradcheck_transformer(
    instances: int = 100,
    seed: int = 10,
    eps: float = 1e-5,
    pre_norm: bool = False,
    with_padding: bool = False,
) -> float:
    rng = SeededRng(seed)
    worst = 0.0
    for case in range(instances):
        def build(r: SeededRng):
            l = int(r.integers(3, 6))
            d, heads, ffn = 6, 2, 5
            params = init_transformer_params(
                r.split(1), num_layers=2, model_dim=d, num_heads=heads, ffn_dim=ffn,
                pre_norm=pre_norm,
            )
            X = r.normal((l, d))
            pad = None
            if with_padding and l >= 4:
                pad = np.zeros(l, dtype=bool)
                pad[-1] = True
            weights = r.normal((l, d))
            out, _, cache = transformer_forward(X, params, pad)
            # only the FFN ReLU has a kink; softmax and layer norm are smooth
            for _, (_, _, ffn_c, _) in zip(params.layers, cache[1]):
                if not _clear_of_kinks(ffn_c[1][0]):
                    return None
            dX, layer_grads = transformer_backward(cache, weights)
            tensors = [dX]
            templates = [X]
            for lp, g in zip(params.layers, layer_grads):
                for name in sorted(lp.arrays()):
                    tensors.append(g[name])
                    templates.append(lp.arrays()[name])
            analytic = _pack(tensors)
            theta0 = _pack(templates)
            names = sorted(params.layers[0].arrays())

            def loss(theta: np.ndarray) -> float:
                parts = _unpack(theta, templates)
                x = parts[0]
                rest = parts[1:]
                from .attention import TransformerLayerParams, TransformerParams

                layers = []
                per = len(names)
                for i in range(len(params.layers)):
                    chunk = rest[i * per : (i + 1) * per]
                    layers.append(TransformerLayerParams(**dict(zip(names, chunk))))
                p = TransformerParams(
                    layers=layers, model_dim=d, num_heads=heads, pre_norm=pre_norm
                )
                o, _, _ = transformer_forward(x, p, pad)
                return float((weights * o).sum())

            return theta0, analytic, loss

        worst = max(worst, _check_case(build, rng.split(case), eps))
    return worst


def run_gradcheck_suite(instances: int = 100, seed: int = 3) -> dict:
    started = time.perf_counter()
    results = {
        "graph_attention": gradcheck_graph_attention(instances, seed + 1),
        "graph2doc": gradcheck_graph2doc(instances, seed + 2),
        "fusion_block": gradcheck_fusion(instances, seed + 3),
        "transformer": gradcheck_transformer(instances, seed + 4),
    }
    results["max_relative_error"] = max(results.values())
    results["seconds"] = time.perf_counter() - started
    results["instances"] = instances
    return results
