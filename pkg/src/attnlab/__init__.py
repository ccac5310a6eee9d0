"""attnlab: a desk-scale laboratory for masked graph attention over
entity graphs, its fully-connected self-attention degenerate, transformer
baselines, a synthetic two-hop retrieval task, and attention-head
entity-pattern probing."""

from .attention import (
    GraphAttentionParams,
    TransformerParams,
    graph_attention_backward,
    graph_attention_forward,
    self_attention_forward,
    transformer_backward,
    transformer_forward,
)
from .entity_graph import (
    ContextExample,
    EntityGraph,
    EntitySpan,
    build_graph,
    density,
    load_context_examples,
    quantile_partition,
)
from .fusion import (
    FusionParams,
    SpanAssignment,
    fusion_block_backward,
    fusion_block_forward,
    graph2doc,
    tok2graph_meanmax,
)
from .head_probe import AttentionTrace, attention_to_token, head_entity_score, rank_heads
from .numerics import Matrix, SeededRng, finite_diff_grad, leaky_relu, matmul, relu, softmax_row
from .synth import SyntheticTaskConfig, generate_synthetic
from .train import ExperimentConfig, MetricsReport, TrainedModel, evaluate_by_density, train

__version__ = "0.1.0"
