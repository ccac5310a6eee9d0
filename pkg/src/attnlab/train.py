"""Training and evaluation harness for the two-hop retrieval task.

Four variants share token embeddings, learned per-position vectors, and
an answer scorer over node states; they differ only in the reasoning
stack between embedding and scoring:

* ``graph_attention``: hop layers of pool -> masked attention -> token
  back-projection, with the final hop scored directly from its updated
  node states.
* ``self_attention``: the identical computation with an all-ones
  adjacency. Because it runs through the same code path, a
  ``graph_attention`` run with ``force_fully_connected`` set produces
  bit-identical losses step for step.
* ``transformer``: a post-norm encoder stack over tokens, mean-max
  pooled into node states for scoring.
* ``none``: no reasoning layers at all; scores come straight from
  pooled embeddings. Per-node features cannot see the question, so this
  baseline hovers near chance and anchors the comparison.

All batched math reuses the module-level forward/backward internals, so
the microscopic layer contracts and the training stack cannot drift
apart.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import (
    GraphAttentionParams,
    TransformerLayerParams,
    TransformerParams,
    graph_attention_batch_backward,
    graph_attention_batch_forward,
    init_graph_attention_params,
    init_transformer_params,
    transformer_batch_backward,
    transformer_batch_forward,
)
from .entity_graph import ContextExample, build_graph, density, quantile_partition
from .errors import NumericError, ShapeError, TrainingError, ValidationError
from .fusion import (
    FusionParams,
    SpanAssignment,
    init_fusion_params,
    pool_batch_backward,
    pool_batch_forward,
    unpool_batch_backward,
    unpool_batch_forward,
)
from .head_probe import AttentionTrace
from .numerics import SeededRng
from .serialize import load_manifest, save_manifest

VARIANTS = ("graph_attention", "self_attention", "transformer", "none")
DEFAULT_QUANTILES = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class ExperimentConfig:
    variant: str = "graph_attention"
    hops: int = 2  # reasoning layers (attention hops / encoder layers)
    hidden_dim: int = 300
    learning_rate: float = 2e-4
    epochs: int = 30
    batch_size: int = 24
    seed: int = 7
    num_heads: int = 4
    leaky_slope: float = 0.2
    embed_scale: float = 0.5
    force_fully_connected: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("hops", "hidden_dim", "epochs", "batch_size", "num_heads"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.variant == "transformer" and self.hidden_dim % self.num_heads:
            raise ValidationError("num_heads must divide hidden_dim")
        return self


@dataclass
class TaskData:
    """Dataset prepared for batched training: uniform geometry required."""

    examples: list[ContextExample]
    labels: np.ndarray
    token_ids: np.ndarray  # (n, L)
    adjacency: np.ndarray  # (n, N, N)
    densities: np.ndarray  # (n,)
    assignment: SpanAssignment
    vocab: list[str]
    n_test: int

    @property
    def n(self) -> int:
        return len(self.examples)

    @property
    def train_idx(self) -> np.ndarray:
        return np.arange(0, self.n - self.n_test)

    @property
    def test_idx(self) -> np.ndarray:
        return np.arange(self.n - self.n_test, self.n)


def prepare_task_data(
    examples: Sequence[ContextExample],
    labels: Sequence[int],
    n_test: int,
    vocab: Sequence[str] | None = None,
) -> TaskData:
    if not examples or len(examples) != len(labels):
        raise ValidationError("need equally many examples and labels")
    if not 0 <= n_test < len(examples):
        raise ValidationError(f"held-out size {n_test} out of range")
    first = examples[0]
    spans = [(sp.start, sp.end) for sp in first.entity_spans]
    for ex in examples:
        if len(ex.tokens) != len(first.tokens) or [
            (sp.start, sp.end) for sp in ex.entity_spans
        ] != spans:
            raise ValidationError(
                "batched training requires a shared token/span layout across examples"
            )
    if vocab is None:
        vocab = sorted({tok for ex in examples for tok in ex.tokens})
    index = {tok: i for i, tok in enumerate(vocab)}
    try:
        token_ids = np.array(
            [[index[tok] for tok in ex.tokens] for ex in examples], dtype=np.int64
        )
    except KeyError as exc:
        raise ValidationError(f"token {exc} missing from the model vocabulary") from exc
    graphs = [build_graph(ex) for ex in examples]
    adjacency = np.stack([g.adjacency for g in graphs])
    dens = np.array([density(g) for g in graphs])
    return TaskData(
        examples=list(examples),
        labels=np.asarray(labels, dtype=np.int64),
        token_ids=token_ids,
        adjacency=adjacency,
        densities=dens,
        assignment=SpanAssignment.from_example(first),
        vocab=list(vocab),
        n_test=n_test,
    )


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def init_model_params(cfg: ExperimentConfig, data: TaskData, rng: SeededRng) -> dict:
    cfg.validate()
    d = cfg.hidden_dim
    L = data.token_ids.shape[1]
    params: dict[str, np.ndarray] = {
        "embed": rng.split(0).normal((len(data.vocab), d), cfg.embed_scale),
        "pos": rng.split(1).normal((L, d), cfg.embed_scale),
    }
    if cfg.variant in ("graph_attention", "self_attention"):
        for t in range(cfg.hops):
            fp = init_fusion_params(rng.split(10 + t), d, d, cfg.leaky_slope)
            params[f"fusion.{t}.proj"] = fp.attention.proj
            params[f"fusion.{t}.attn_vec"] = fp.attention.attn_vec
            params[f"fusion.{t}.mix"] = fp.mix
        params["scorer"] = rng.split(40).normal((2 * d,), 1.0 / np.sqrt(2 * d))
    elif cfg.variant == "transformer":
        tfp = init_transformer_params(
            rng.split(20), cfg.hops, d, cfg.num_heads, ffn_dim=d
        )
        for i, lp in enumerate(tfp.layers):
            for name, arr in lp.arrays().items():
                params[f"tf.{i}.{name}"] = arr
        params["scorer"] = rng.split(40).normal((2 * d,), 1.0 / np.sqrt(2 * d))
    else:
        params["scorer"] = rng.split(40).normal((2 * d,), 1.0 / np.sqrt(2 * d))
    return params


def _fusion_views(params: dict, cfg: ExperimentConfig) -> list[FusionParams]:
    views = []
    for t in range(cfg.hops):
        views.append(
            FusionParams(
                attention=GraphAttentionParams(
                    proj=params[f"fusion.{t}.proj"],
                    attn_vec=params[f"fusion.{t}.attn_vec"],
                    leaky_slope=cfg.leaky_slope,
                ),
                mix=params[f"fusion.{t}.mix"],
            )
        )
    return views


def _transformer_view(params: dict, cfg: ExperimentConfig) -> TransformerParams:
    layers = []
    for i in range(cfg.hops):
        names = (
            "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2",
            "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
        )
        layers.append(TransformerLayerParams(**{n: params[f"tf.{i}.{n}"] for n in names}))
    return TransformerParams(
        layers=layers, model_dim=cfg.hidden_dim, num_heads=cfg.num_heads
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _variant_adjacency(cfg: ExperimentConfig, adjacency: np.ndarray) -> np.ndarray:
    if cfg.variant == "self_attention" or cfg.force_fully_connected:
        return np.ones_like(adjacency)
    return adjacency


def model_forward(cfg: ExperimentConfig, params: dict, data: TaskData, idx: np.ndarray):
    """Scores (B, N) over answer nodes plus the cache for backward."""
    tok = data.token_ids[idx]
    x0 = params["embed"][tok] + params["pos"][None, :, :]
    asg = data.assignment
    scorer = params["scorer"]
    if cfg.variant == "none":
        nodes, pool_c = pool_batch_forward(x0, asg)
        scores = nodes @ scorer
        return scores, ("none", tok, pool_c, nodes)
    if cfg.variant == "transformer":
        xt, traces, tf_cache = transformer_batch_forward(x0, _transformer_view(params, cfg))
        nodes, pool_c = pool_batch_forward(xt, asg)
        scores = nodes @ scorer
        return scores, ("transformer", tok, tf_cache, pool_c, nodes, traces)
    adj = _variant_adjacency(cfg, data.adjacency[idx])
    hop_caches = []
    x = x0
    for fp in _fusion_views(params, cfg):
        nodes, pc = pool_batch_forward(x, asg)
        upd, _, ac = graph_attention_batch_forward(nodes, adj, fp.attention)
        x, uc = unpool_batch_forward(x, upd, asg, fp.mix)
        hop_caches.append((pc, ac, uc))
    nodes, pc_last = pool_batch_forward(x, asg)
    scores = nodes @ scorer
    return scores, ("graph", tok, hop_caches, pc_last, nodes)


def _scorer_grad(d_scores: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    return d_scores.reshape(-1) @ nodes.reshape(-1, nodes.shape[-1])


def _embedding_grad(vocab_size: int, tok: np.ndarray, dx0: np.ndarray) -> np.ndarray:
    # one-hot GEMM beats np.add.at by a wide margin at these vocab sizes
    flat = tok.ravel()
    onehot = (flat[:, None] == np.arange(vocab_size)[None, :]).astype(np.float64)
    return onehot.T @ dx0.reshape(-1, dx0.shape[-1])


def model_backward(cfg: ExperimentConfig, params: dict, cache, d_scores: np.ndarray) -> dict:
    grads: dict[str, np.ndarray] = {}
    scorer = params["scorer"]
    kind = cache[0]
    if kind == "none":
        _, tok, pool_c, nodes = cache
        grads["scorer"] = _scorer_grad(d_scores, nodes)
        d_nodes = d_scores[:, :, None] * scorer
        dx0 = pool_batch_backward(pool_c, d_nodes)
    elif kind == "transformer":
        _, tok, tf_cache, pool_c, nodes, _ = cache
        grads["scorer"] = _scorer_grad(d_scores, nodes)
        d_nodes = d_scores[:, :, None] * scorer
        d_xt = pool_batch_backward(pool_c, d_nodes)
        dx0, layer_grads = transformer_batch_backward(tf_cache, d_xt)
        for i, g in enumerate(layer_grads):
            for name, arr in g.items():
                grads[f"tf.{i}.{name}"] = arr
    else:
        _, tok, hop_caches, pc_last, nodes = cache
        grads["scorer"] = _scorer_grad(d_scores, nodes)
        d_nodes = d_scores[:, :, None] * scorer
        dx = pool_batch_backward(pc_last, d_nodes)
        for t, (pc, ac, uc) in zip(range(len(hop_caches) - 1, -1, -1), reversed(hop_caches)):
            dC_direct, d_nodes_upd, d_mix = unpool_batch_backward(uc, dx)
            d_nodes, d_proj, d_vec = graph_attention_batch_backward(ac, d_nodes_upd)
            grads[f"fusion.{t}.mix"] = d_mix
            grads[f"fusion.{t}.proj"] = d_proj
            grads[f"fusion.{t}.attn_vec"] = d_vec
            dx = dC_direct + pool_batch_backward(pc, d_nodes)
        dx0 = dx
    grads["embed"] = _embedding_grad(params["embed"].shape[0], tok, dx0)
    grads["pos"] = dx0.sum(axis=0)
    return grads


def softmax_cross_entropy(scores: np.ndarray, labels: np.ndarray):
    """Mean loss over the batch and the score gradient."""
    m = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - m)
    z = e.sum(axis=1, keepdims=True)
    p = e / z
    b = scores.shape[0]
    logp = scores - m - np.log(z)
    loss = float(-logp[np.arange(b), labels].mean())
    d = p.copy()
    d[np.arange(b), labels] -= 1.0
    return loss, d / b


class Adam:
    """Per-parameter adaptive steps with bias correction."""

    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[k] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# training loop and reports
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    cfg: ExperimentConfig
    params: dict
    vocab: list[str]
    spans: list[tuple[int, int]]
    num_tokens: int

    def predict_scores(self, data: TaskData, idx: np.ndarray, chunk: int = 256) -> np.ndarray:
        outs = []
        for lo in range(0, idx.size, chunk):
            scores, _ = model_forward(self.cfg, self.params, data, idx[lo : lo + chunk])
            outs.append(scores)
        return np.concatenate(outs) if outs else np.zeros((0, 0))

    def predict(self, data: TaskData, idx: np.ndarray) -> np.ndarray:
        return self.predict_scores(data, idx).argmax(axis=1)

    def prepare(self, examples, labels, n_test: int = 0) -> TaskData:
        data = prepare_task_data(examples, labels, n_test, vocab=self.vocab)
        if [(s, e) for s, e in data.assignment.spans] != self.spans:
            raise ValidationError("dataset span layout differs from the trained model")
        return data

    def save(self, path: str | Path) -> None:
        meta = {
            "variant": self.cfg.variant,
            "hops": self.cfg.hops,
            "hidden_dim": self.cfg.hidden_dim,
            "num_heads": self.cfg.num_heads,
            "leaky_slope": self.cfg.leaky_slope,
            "seed": self.cfg.seed,
            "vocab": self.vocab,
            "spans": [list(s) for s in self.spans],
            "num_tokens": self.num_tokens,
        }
        save_manifest(self.params, path, meta)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        arrays, meta = load_manifest(path)
        cfg = ExperimentConfig(
            variant=meta["variant"],
            hops=int(meta["hops"]),
            hidden_dim=int(meta["hidden_dim"]),
            num_heads=int(meta["num_heads"]),
            leaky_slope=float(meta.get("leaky_slope", 0.2)),
            seed=int(meta.get("seed", 0)),
        )
        return cls(
            cfg=cfg,
            params=arrays,
            vocab=[str(t) for t in meta["vocab"]],
            spans=[(int(s), int(e)) for s, e in meta["spans"]],
            num_tokens=int(meta["num_tokens"]),
        )


@dataclass
class MetricsReport:
    variant: str
    seed: int
    accuracy: float
    bins: list[dict]
    loss_curve: list[float]
    wall_clock_seconds: float | None

    def to_json_dict(self, include_wall_clock: bool = False) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "bins": self.bins,
            "loss_curve": self.loss_curve,
            # wall clock is run-dependent; artifacts stay byte-reproducible
            "wall_clock_seconds": self.wall_clock_seconds if include_wall_clock else None,
        }

    def write_csv(self, path: str | Path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["variant", self.variant])
            w.writerow(["seed", self.seed])
            w.writerow(["accuracy", repr(self.accuracy)])
            for i, loss in enumerate(self.loss_curve):
                w.writerow([f"epoch_{i}_loss", repr(loss)])
            for b in self.bins:
                acc = "" if b["accuracy"] is None else repr(b["accuracy"])
                w.writerow([f"bin_q{b['quantile']}_accuracy", acc])


def density_bins(
    model: TrainedModel,
    data: TaskData,
    idx: np.ndarray,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> tuple[list[dict], float]:
    """Accuracy overall and stratified by adjacency-density quantile bins."""
    preds = model.predict(data, idx)
    correct = (preds == data.labels[idx]).astype(np.float64)
    accuracy = float(correct.mean()) if idx.size else float("nan")
    by_id = {data.examples[i].id: c for i, c in zip(idx, correct)}
    report = quantile_partition(
        [float(data.densities[i]) for i in idx],
        quantiles,
        ids=[data.examples[i].id for i in idx],
    )
    bins = []
    for b in report.bins:
        members = b.example_ids
        acc = float(np.mean([by_id[m] for m in members])) if members else None
        bins.append(
            {
                "quantile": b.quantile,
                "boundary_density": b.boundary_density,
                "size": len(members),
                "accuracy": acc,
            }
        )
    return bins, accuracy


def evaluate_by_density(
    model: TrainedModel,
    examples: Sequence[ContextExample],
    labels: Sequence[int],
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> list[dict]:
    data = model.prepare(examples, labels, n_test=0)
    bins, _ = density_bins(model, data, np.arange(data.n), quantiles)
    return bins


def train(
    cfg: ExperimentConfig,
    data: TaskData,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> tuple[TrainedModel, MetricsReport]:
    """Deterministic Adam training; returns the model and its metrics."""
    cfg.validate()
    if data.n_test < 1:
        raise ValidationError("training needs a held-out slice")
    started = time.perf_counter()
    rng = SeededRng(cfg.seed)
    params = init_model_params(cfg, data, rng.split(100))
    opt = Adam(params, cfg.learning_rate)
    shuffle_rng = rng.split(200)
    train_idx = data.train_idx
    loss_curve = []
    step = 0
    for _epoch in range(cfg.epochs):
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        losses = []
        for lo in range(0, order.size, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            try:
                scores, cache = model_forward(cfg, params, data, batch)
                loss, d_scores = softmax_cross_entropy(scores, data.labels[batch])
            except NumericError as exc:
                raise TrainingError(f"training diverged: {exc}", step) from exc
            if not np.isfinite(loss):
                raise TrainingError("loss diverged to a non-finite value", step)
            grads = model_backward(cfg, params, cache, d_scores)
            opt.step(grads)
            losses.append(loss)
            step += 1
        loss_curve.append(float(np.mean(losses)))
    model = TrainedModel(
        cfg=cfg,
        params=params,
        vocab=data.vocab,
        spans=[(s, e) for s, e in data.assignment.spans],
        num_tokens=data.token_ids.shape[1],
    )
    bins, accuracy = density_bins(model, data, data.test_idx, quantiles)
    report = MetricsReport(
        variant=cfg.variant,
        seed=cfg.seed,
        accuracy=accuracy,
        bins=bins,
        loss_curve=loss_curve,
        wall_clock_seconds=time.perf_counter() - started,
    )
    return model, report


def train_loss_curve(cfg: ExperimentConfig, data: TaskData) -> list[float]:
    """Convenience wrapper used by the degeneracy step-identity check."""
    _, report = train(cfg, data)
    return report.loss_curve


# ---------------------------------------------------------------------------
# trace export for the head probe
# ---------------------------------------------------------------------------


def transformer_traces(
    model: TrainedModel, data: TaskData, idx: np.ndarray
) -> list[AttentionTrace]:
    if model.cfg.variant != "transformer":
        raise ValidationError("attention traces are exported from the transformer variant")
    tok = data.token_ids[idx]
    x0 = model.params["embed"][tok] + model.params["pos"][None, :, :]
    _, traces, _ = transformer_batch_forward(x0, _transformer_view(model.params, model.cfg))
    entity_mask = np.zeros(data.token_ids.shape[1], dtype=bool)
    for s, e in model.spans:
        entity_mask[s:e] = True
    out = []
    for bi, i in enumerate(idx):
        layers = [[np.array(layer[bi, h]) for h in range(layer.shape[1])] for layer in traces]
        out.append(
            AttentionTrace(
                example_id=data.examples[i].id, layers=layers, entity_mask=entity_mask.copy()
            ).validate()
        )
    return out
