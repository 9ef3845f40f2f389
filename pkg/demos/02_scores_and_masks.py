#!/usr/bin/env python3
"""Score a pre-trained encoder with each criterion and compare the masks they induce."""

import numpy as np

from sopai.masking import SPARSITY_GRID, collapsed_layers, jaccard, topk_mask
from sopai.net import init_network
from sopai.runner import PRETRAIN_SCHEDULE
from sopai.saliency import compute_scores
from sopai.tasks import generate
from sopai.trainer import pretrain

tasks = generate(seed=0)
net = init_network((tasks.dim, 128, 64), {t.task_id: tasks.n_classes for t in tasks.tasks}, seed=0)
net0, hist = pretrain(net, tasks.train_batches(), PRETRAIN_SCHEDULE, seed=0)
print("pre-training accuracy per task:", {k: round(v, 3) for k, v in hist.accuracy.items()})

source = tasks.tasks[0]
methods = ("magnitude", "diag", "block", "snip", "grasp")
scores = {m: compute_scores(m, net0, source.train, source.task_id) for m in methods}

q = SPARSITY_GRID[3] / 100
masks = {m: topk_mask(s, q) for m, s in scores.items()}
print(f"\nJaccard overlap of kept weights at {q:.2%} sparsity")
print(" " * 10 + "".join(f"{m:>10s}" for m in methods))
for a in methods:
    print(f"{a:<10s}" + "".join(f"{jaccard(masks[a], masks[b]):10.3f}" for b in methods))

# fraction kept per layer, and where a layer disappears entirely
for m in methods:
    kept = [float(np.mean(masks[m].bits[s])) for s in net0.layer_slices()]
    dead = [f"{s:g}%" for s in SPARSITY_GRID if collapsed_layers(net0, topk_mask(scores[m], s / 100))]
    print(f"{m:<10s} kept per layer {np.round(kept, 3)}  collapse at {dead or 'none'}")
