"""Command line entry point.

Subcommands: build-graph, density-report, equivalence-check, gradcheck,
gen-synthetic, train, eval-density, probe-heads. Each reads an optional
flat key=value config file, applies ``--set key=value`` overrides, and
writes JSON/CSV artifacts into the output directory (``--out``, falling
back to the ATTNLAB_OUT environment variable, then ./attnlab_out).
Checking subcommands exit nonzero when their tolerance is violated.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .config import build_dataclass, parse_config_file, parse_override
from .entity_graph import build_graph, density, load_context_examples, quantile_partition
from .errors import GenerationError, TrainingError, ValidationError
from .head_probe import head_report_rows, load_traces, write_head_report_csv
from .synth import (
    SyntheticTaskConfig,
    generate_synthetic,
    load_labels_jsonl,
    write_dataset_jsonl,
    write_labels_jsonl,
)
from .train import (
    DEFAULT_QUANTILES,
    ExperimentConfig,
    TrainedModel,
    density_bins,
    prepare_task_data,
    train,
    transformer_traces,
)

EQUIV_TOL = 1e-12
GRAD_TOL = 1e-4


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("ATTNLAB_OUT") or "attnlab_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _config_values(args) -> dict:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for item in args.set or []:
        key, val = parse_override(item)
        values[key] = val
    return values


def _quantiles(args) -> tuple[float, ...]:
    if not getattr(args, "quantiles", None):
        return tuple(DEFAULT_QUANTILES)
    return tuple(float(q) for q in args.quantiles.split(","))


def cmd_build_graph(args) -> int:
    out = _out_dir(args)
    examples = load_context_examples(args.input)
    rows = []
    for ex in examples:
        g = build_graph(ex)
        rows.append(
            {
                "id": ex.id,
                "mentions": g.mentions,
                "adjacency": g.adjacency.astype(int).tolist(),
                "density": density(g),
            }
        )
    _dump_json({"graphs": rows}, out / "graphs.json")
    with open(out / "graph_density.csv", "w", encoding="utf-8") as fh:
        fh.write("id,density\n")
        for r in rows:
            fh.write(f"{r['id']},{r['density']!r}\n")
    print(f"built {len(rows)} graphs -> {out / 'graphs.json'}")
    return 0


def cmd_density_report(args) -> int:
    out = _out_dir(args)
    examples = load_context_examples(args.input)
    densities = []
    ids = []
    for ex in examples:
        densities.append(density(build_graph(ex)))
        ids.append(ex.id)
    report = quantile_partition(densities, _quantiles(args), ids=ids)
    _dump_json(report.to_json_dict(), out / "density_report.json")
    report.write_csv(out / "density_report.csv")
    print(f"density report over {len(ids)} examples -> {out / 'density_report.json'}")
    return 0


def cmd_equivalence_check(args) -> int:
    out = _out_dir(args)
    result = checks.degeneracy_suite(
        instances=args.instances, seed=args.seed, loop_instances=args.loop_instances
    )
    result["tolerance"] = EQUIV_TOL
    worst = max(result["max_pair_deviation"], result["max_loop_deviation"])
    result["passed"] = bool(worst <= EQUIV_TOL)
    _dump_json(result, out / "equivalence.json")
    print(
        f"degeneracy: pair deviation {result['max_pair_deviation']:.3e}, "
        f"loop deviation {result['max_loop_deviation']:.3e} over {args.instances} instances"
    )
    return 0 if result["passed"] else 1


def cmd_gradcheck(args) -> int:
    out = _out_dir(args)
    result = checks.run_gradcheck_suite(instances=args.instances, seed=args.seed)
    result["tolerance"] = GRAD_TOL
    result["passed"] = bool(result["max_relative_error"] <= GRAD_TOL)
    _dump_json(result, out / "gradcheck.json")
    for name in ("graph_attention", "graph2doc", "fusion_block", "transformer"):
        print(f"gradcheck {name}: max relative error {result[name]:.3e}")
    return 0 if result["passed"] else 1


def cmd_gen_synthetic(args) -> int:
    out = _out_dir(args)
    cfg = build_dataclass(SyntheticTaskConfig, _config_values(args))
    examples, labels = generate_synthetic(cfg)
    data_path = out / f"dataset_seed{cfg.seed}.jsonl"
    labels_path = out / f"labels_seed{cfg.seed}.jsonl"
    write_dataset_jsonl(examples, data_path)
    write_labels_jsonl(examples, labels, labels_path)
    print(f"wrote {len(examples)} examples -> {data_path}")
    return 0


def _load_or_generate(args, values: dict):
    if args.dataset:
        examples = load_context_examples(args.dataset)
        if not args.labels:
            raise ValidationError("--labels is required with --dataset")
        by_id = load_labels_jsonl(args.labels)
        labels = [by_id[ex.id] for ex in examples]
        return examples, labels
    cfg = build_dataclass(SyntheticTaskConfig, values)
    return generate_synthetic(cfg)


def cmd_train(args) -> int:
    out = _out_dir(args)
    values = _config_values(args)
    cfg = build_dataclass(ExperimentConfig, values)
    examples, labels = _load_or_generate(args, values)
    data = prepare_task_data(examples, labels, n_test=args.test_count)
    model, report = train(cfg, data, quantiles=_quantiles(args))
    stem = f"{cfg.variant}_seed{cfg.seed}"
    model.save(out / f"model_{stem}.json")
    _dump_json(report.to_json_dict(), out / f"metrics_{stem}.json")
    report.write_csv(out / f"metrics_{stem}.csv")
    with open(out / f"run_{stem}.log", "w", encoding="utf-8") as fh:
        fh.write(f"wall_clock_seconds={report.wall_clock_seconds}\n")
    if args.emit_traces:
        traces = transformer_traces(model, data, data.test_idx[: args.emit_traces])
        from .head_probe import save_traces

        save_traces(traces, out / f"traces_{stem}.jsonl")
    print(
        f"trained {cfg.variant}: held-out accuracy {report.accuracy:.4f} "
        f"({report.wall_clock_seconds:.1f}s) -> {out / f'metrics_{stem}.json'}"
    )
    return 0


def cmd_eval_density(args) -> int:
    out = _out_dir(args)
    model = TrainedModel.load(args.model)
    examples = load_context_examples(args.dataset)
    by_id = load_labels_jsonl(args.labels)
    labels = [by_id[ex.id] for ex in examples]
    data = model.prepare(examples, labels)
    bins, accuracy = density_bins(model, data, np.arange(data.n), _quantiles(args))
    doc = {"variant": model.cfg.variant, "accuracy": accuracy, "bins": bins}
    _dump_json(doc, out / "density_eval.json")
    with open(out / "density_eval.csv", "w", encoding="utf-8") as fh:
        fh.write("quantile,boundary_density,bin_size,accuracy\n")
        for b in bins:
            acc = "" if b["accuracy"] is None else repr(b["accuracy"])
            fh.write(f"{b['quantile']},{b['boundary_density']!r},{b['size']},{acc}\n")
    print(f"eval-density: accuracy {accuracy:.4f} over {data.n} examples")
    return 0


def cmd_probe_heads(args) -> int:
    out = _out_dir(args)
    traces = load_traces(args.traces)
    rows = head_report_rows(traces)
    _dump_json({"heads": rows}, out / "head_report.json")
    write_head_report_csv(rows, out / "head_report.csv")
    top = rows[0]
    print(
        f"probe-heads: top head layer {top['layer']} head {top['head']} "
        f"score {top['score_colmean']:.4f} over {len(traces)} traces"
    )
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="artifact directory (default: $ATTNLAB_OUT or ./attnlab_out)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnlab",
        description="entity-graph attention laboratory: graphs, equivalence and "
        "gradient checks, synthetic two-hop training, head probing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build entity graphs from a JSONL corpus")
    _add_common(p)
    p.add_argument("--input", required=True, help="ContextExample JSONL file")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("density-report", help="adjacency density quantile report")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--quantiles", help="comma separated, e.g. 0.2,0.4,0.6,0.8,1.0")
    p.set_defaults(func=cmd_density_report)

    p = sub.add_parser("equivalence-check", help="masked vs fully-connected degeneracy suite")
    _add_common(p)
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--loop-instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_equivalence_check)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all backward passes")
    _add_common(p)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synthetic", help="generate the synthetic two-hop dataset")
    _add_common(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train one variant and report metrics")
    _add_common(p)
    p.add_argument("--dataset", help="ContextExample JSONL (default: generate synthetically)")
    p.add_argument("--labels", help="answer-node JSONL matching --dataset")
    p.add_argument("--test-count", type=int, default=1000)
    p.add_argument("--quantiles")
    p.add_argument("--emit-traces", type=int, default=0, metavar="N",
                   help="export attention traces for N held-out examples (transformer)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-density", help="density-stratified accuracy of a checkpoint")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--quantiles")
    p.set_defaults(func=cmd_eval_density)

    p = sub.add_parser("probe-heads", help="rank attention heads by entity focus")
    _add_common(p)
    p.add_argument("--traces", required=True, help="AttentionTrace JSONL file")
    p.set_defaults(func=cmd_probe_heads)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, GenerationError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
