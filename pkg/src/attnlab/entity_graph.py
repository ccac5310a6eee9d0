"""Entity graphs over annotated contexts.

Nodes are entity mention spans. Two mention nodes are connected when they
carry the same (normalized) mention text anywhere in the context, or when
they occur in the same sentence. Every node keeps a self-loop so no
neighborhood is empty. The module also computes adjacency density (the
fraction of ones in the binary matrix, diagonal included) and nearest-rank
quantile partitions of density populations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .numerics import Matrix


def normalize_mention(mention: str) -> str:
    """Casefold, trim, and collapse internal whitespace."""
    return " ".join(mention.split()).casefold()


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int  # half-open
    mention: str
    sentence_index: int


@dataclass(frozen=True)
class ContextExample:
    """One annotated context: tokens, sentence spans, entity spans."""

    id: str
    tokens: list[str]
    sentence_spans: list[tuple[int, int]]
    entity_spans: list[EntitySpan]

    def validate(self) -> "ContextExample":
        n_tok = len(self.tokens)
        prev_end = 0
        for k, (s, e) in enumerate(self.sentence_spans):
            if not (0 <= s < e <= n_tok):
                raise ValidationError(
                    f"example {self.id}: sentence span {k} = [{s}, {e}) out of range"
                )
            if s < prev_end:
                raise ValidationError(
                    f"example {self.id}: sentence span {k} overlaps or is unsorted"
                )
            prev_end = e
        for k, span in enumerate(self.entity_spans):
            if span.end <= span.start:
                raise ValidationError(
                    f"example {self.id}: entity span {k} ({span.mention!r}) is empty"
                )
            if not (0 <= span.sentence_index < len(self.sentence_spans)):
                raise ValidationError(
                    f"example {self.id}: entity span {k} ({span.mention!r}) "
                    f"names missing sentence {span.sentence_index}"
                )
            s, e = self.sentence_spans[span.sentence_index]
            if not (s <= span.start and span.end <= e):
                raise ValidationError(
                    f"example {self.id}: entity span {k} ({span.mention!r}) "
                    f"[{span.start}, {span.end}) leaves sentence {span.sentence_index}"
                )
        return self

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "tokens": list(self.tokens),
            "sentence_spans": [list(s) for s in self.sentence_spans],
            "entity_spans": [
                {
                    "start": sp.start,
                    "end": sp.end,
                    "mention": sp.mention,
                    "sentence_index": sp.sentence_index,
                }
                for sp in self.entity_spans
            ],
        }


def example_from_json_dict(d: dict) -> ContextExample:
    spans = [
        EntitySpan(
            start=int(sp["start"]),
            end=int(sp["end"]),
            mention=str(sp["mention"]),
            sentence_index=int(sp["sentence_index"]),
        )
        for sp in d["entity_spans"]
    ]
    return ContextExample(
        id=str(d["id"]),
        tokens=[str(t) for t in d["tokens"]],
        sentence_spans=[(int(s), int(e)) for s, e in d["sentence_spans"]],
        entity_spans=spans,
    ).validate()


def load_context_examples(path: str | Path) -> list[ContextExample]:
    """Read one ContextExample per JSONL line; errors name the line."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                examples.append(example_from_json_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return examples


@dataclass(frozen=True)
class EntityGraph:
    """Mention nodes plus a symmetric binary adjacency with unit diagonal."""

    n: int
    mentions: list[str]  # normalized
    adjacency: Matrix

    def neighbor_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.adjacency[i]) for i in range(self.n)]


def build_graph(example: ContextExample, exact_mentions: bool = False) -> EntityGraph:
    """Connect co-mention and co-sentence entity pairs; add self-loops.

    Node order follows ``example.entity_spans``. With ``exact_mentions``
    the same-mention rule compares raw strings instead of normalized ones.
    """
    example.validate()
    spans = example.entity_spans
    n = len(spans)
    keys = [sp.mention if exact_mentions else normalize_mention(sp.mention) for sp in spans]
    adj = np.eye(n, dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            if keys[i] == keys[j] or spans[i].sentence_index == spans[j].sentence_index:
                adj[i, j] = adj[j, i] = 1.0
    return EntityGraph(n=n, mentions=keys, adjacency=adj)


def density(g: EntityGraph) -> float:
    """Fraction of ones in the full n x n adjacency, diagonal included."""
    return float(g.adjacency.sum()) / float(g.n * g.n)


@dataclass(frozen=True)
class DensityBin:
    quantile: float
    boundary_density: float
    example_ids: list[str]

    @property
    def size(self) -> int:
        return len(self.example_ids)


@dataclass(frozen=True)
class DensityReport:
    bins: list[DensityBin]
    mean_density: float

    def to_json_dict(self) -> dict:
        return {
            "mean_density": self.mean_density,
            "bins": [
                {
                    "quantile": b.quantile,
                    "boundary_density": b.boundary_density,
                    "bin_size": b.size,
                    "example_ids": list(b.example_ids),
                }
                for b in self.bins
            ],
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["quantile", "boundary_density", "bin_size"])
            for b in self.bins:
                w.writerow([b.quantile, repr(b.boundary_density), b.size])


def quantile_partition(
    densities: Sequence[float],
    quantiles: Sequence[float],
    ids: Sequence[str] | None = None,
) -> DensityReport:
    """Partition a density population by nearest-rank quantiles.

    Boundary for quantile q is ``sorted_densities[ceil(q*n) - 1]``. Bin k
    holds the sorted positions between consecutive ranks, so bins always
    partition the input even under ties. A final quantile of 1.0 is
    appended when absent so the partition is exhaustive.
    """
    n = len(densities)
    if n == 0:
        raise ValueError("quantile_partition needs a non-empty density list")
    qs = [float(q) for q in quantiles]
    if not qs or any(not (0.0 < q <= 1.0) for q in qs):
        raise ValueError("quantiles must lie in (0, 1]")
    if any(b <= a for a, b in zip(qs, qs[1:])):
        raise ValueError("quantiles must be strictly increasing")
    if qs[-1] < 1.0:
        qs.append(1.0)
    if ids is None:
        ids = [str(i) for i in range(n)]
    if len(ids) != n:
        raise ValueError("ids must parallel densities")

    order = sorted(range(n), key=lambda i: (densities[i], str(ids[i])))
    sorted_d = [float(densities[i]) for i in order]
    bins = []
    prev_rank = 0
    for q in qs:
        rank = int(np.ceil(q * n))
        boundary = sorted_d[rank - 1]
        members = [str(ids[order[i]]) for i in range(prev_rank, rank)]
        bins.append(DensityBin(quantile=q, boundary_density=boundary, example_ids=members))
        prev_rank = rank
    mean = float(np.mean([float(d) for d in densities]))
    return DensityReport(bins=bins, mean_density=mean)
