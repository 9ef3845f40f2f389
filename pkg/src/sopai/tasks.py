"""Synthetic multi-task classification suite with tunable task alignment.

Each task places its ``C`` class prototypes on an orthonormal ``C``-frame
``sqrt(rho) U_shared + sqrt(1-rho) U_k``, with ``U_shared`` and the ``U_k``
mutually orthogonal.  Every pair of task frames then has all principal cosines
equal to ``rho``: ``rho=1`` puts every task in one subspace, ``rho=0`` makes
them orthogonal.  Examples are prototypes plus isotropic Gaussian noise.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import ortho_group

from .net import Batch

DEFAULT_SCALE = 3.0
DEFAULT_NOISE = 0.8


@dataclass(frozen=True)
class Task:
    task_id: int
    train: Batch
    eval: Batch
    basis: np.ndarray
    prototypes: np.ndarray


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple
    n_classes: int
    dim: int
    seed: int
    rho: float
    noise: float = DEFAULT_NOISE
    scale: float = DEFAULT_SCALE

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def __getitem__(self, i) -> Task:
        return self.tasks[i]

    def train_batches(self):
        return {t.task_id: t.train for t in self.tasks}


def required_dim(n_tasks, C, rho) -> int:
    if rho == 1.0:
        return C
    if rho == 0.0:
        return n_tasks * C
    return (n_tasks + 1) * C


def _sample(rng, protos, per_class, noise):
    C, d = protos.shape
    labels = np.repeat(np.arange(C), per_class)
    X = protos[labels] + noise * rng.standard_normal((labels.size, d))
    perm = rng.permutation(labels.size)
    return Batch(X[perm], labels[perm])


def generate(seed=0, n_tasks=10, C=10, d=64, per_class=50, rho=1.0, noise=DEFAULT_NOISE, scale=DEFAULT_SCALE,
             eval_per_class=None) -> TaskSet:
    """Build ``n_tasks`` balanced tasks; ``eval_per_class`` defaults to ``per_class``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    need = required_dim(n_tasks, C, rho)
    if d < need:
        raise ValueError(f"rho={rho} with {n_tasks} tasks of {C} classes needs d >= {need}, got {d}")
    rng = np.random.default_rng(seed)
    frame = ortho_group.rvs(d, random_state=rng) if d > 1 else np.ones((1, 1))
    shared = frame[:, :C]
    tasks = []
    for k in range(n_tasks):
        if rho == 1.0:
            basis = shared
        else:
            own = frame[:, C * (k + (rho > 0)):C * (k + 1 + (rho > 0))]
            basis = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * own
        rot = ortho_group.rvs(C, random_state=rng) if C > 1 else np.ones((1, 1))
        protos = scale * (basis @ rot).T
        per_eval = per_class if eval_per_class is None else eval_per_class
        tasks.append(Task(k, _sample(rng, protos, per_class, noise), _sample(rng, protos, per_eval, noise),
                          basis, protos))
    return TaskSet(tuple(tasks), C, d, seed, rho, noise, scale)


def rotate_roles(taskset: TaskSet, source_index: int):
    """``(source, [transfer...])`` with task ``source_index`` as the source."""
    if not 0 <= source_index < taskset.n_tasks:
        raise IndexError(f"source index {source_index} out of range for {taskset.n_tasks} tasks")
    src = taskset.tasks[source_index]
    return src, [t for t in taskset.tasks if t.task_id != src.task_id]


def principal_cosines(U, V) -> np.ndarray:
    return np.linalg.svd(U.T @ V, compute_uv=False)


def dump(taskset: TaskSet, directory):
    os.makedirs(directory, exist_ok=True)
    for t in taskset.tasks:
        for split, b in (("train", t.train), ("eval", t.eval)):
            with open(os.path.join(directory, f"task{t.task_id}_{split}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["label"] + [f"x_{i}" for i in range(taskset.dim)])
                for y, x in zip(b.labels, b.inputs):
                    w.writerow([int(y)] + [repr(float(v)) for v in x])
    manifest = dict(seed=taskset.seed, rho=taskset.rho, n_tasks=taskset.n_tasks, n_classes=taskset.n_classes,
                    dim=taskset.dim, noise=taskset.noise, scale=taskset.scale)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load(directory) -> TaskSet:
    """Inverse of :func:`dump`; prototypes and bases are not stored and come back as ``None``."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        m = json.load(fh)
    tasks = []
    for k in range(m["n_tasks"]):
        splits = {}
        for split in ("train", "eval"):
            with open(os.path.join(directory, f"task{k}_{split}.csv"), newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            splits[split] = Batch(np.array([[float(v) for v in r[1:]] for r in rows]),
                                  np.array([int(r[0]) for r in rows]))
        tasks.append(Task(k, splits["train"], splits["eval"], None, None))
    return TaskSet(tuple(tasks), m["n_classes"], m["dim"], m["seed"], m["rho"], m["noise"], m["scale"])
