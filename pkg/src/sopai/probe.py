"""Ridge-regression linear probes and the source/transfer pruning protocol.

Protocol for one source task and one scoring method:

1. ``unpruned``: evaluate every task with its frozen probe on the dense encoder.
2. ``pruned``: score and mask using source data only, evaluate every task.
3. ``pruned_finetuned``: re-train the surviving weights on the source task,
   evaluate every task.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import hessian as hs
from .masking import apply_mask, topk_mask
from .net import Batch, Network, features, one_hot
from .saliency import compute_scores, obs_update_set
from .trainer import SgdSchedule, retrain

log = logging.getLogger(__name__)

STAGES = ("unpruned", "pruned", "pruned_finetuned")
CSV_FIELDS = ("method", "sparsity", "task_id", "role", "stage", "accuracy", "seed")


@dataclass(frozen=True)
class ProbeClassifier:
    task_id: object
    xi: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        xi = np.array(self.xi, dtype=np.float64)
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    def digest(self) -> str:
        return hashlib.sha256(self.xi.tobytes()).hexdigest()


@dataclass(frozen=True)
class EvalRecord:
    method: str
    sparsity: float
    task_id: object
    role: str
    stage: str
    accuracy: float
    seed: Optional[int] = None

    def row(self):
        return [self.method, f"{self.sparsity:.6f}", self.task_id, self.role, self.stage,
                f"{self.accuracy:.6f}", self.seed]


def fit_ridge(Phi, Y, alpha=1.0) -> np.ndarray:
    """``(Phi^T Phi + alpha I)^-1 Phi^T Y`` via a symmetric LDL^T solve.

    LDL^T rather than Cholesky keeps scaled-identity systems exact (no square roots).
    """
    Phi = np.asarray(Phi, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if alpha <= 0:
        raise ValueError("ridge coefficient must be positive")
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(Y))):
        raise ValueError("ridge inputs contain non-finite values")
    G = Phi.T @ Phi + alpha * np.eye(Phi.shape[1])
    return linalg.solve(G, Phi.T @ Y, assume_a="sym")


def ridge_objective(Phi, Y, xi, alpha=1.0) -> float:
    return float(np.sum((Y - Phi @ xi) ** 2) + alpha * np.sum(xi * xi))


def fit_probe(net: Network, batch: Batch, task_id, n_classes, alpha=1.0) -> ProbeClassifier:
    return ProbeClassifier(task_id, fit_ridge(features(net, batch.inputs), one_hot(batch.labels, n_classes), alpha),
                           alpha)


def evaluate(net: Network, probe: ProbeClassifier, batch: Batch) -> float:
    logits = features(net, batch.inputs) @ probe.xi
    return float(np.mean(np.argmax(logits, axis=1) == batch.labels))


class AccessLog:
    """Counts reads of task data, keyed by ``(task_id, phase)``."""

    EVAL = "evaluate"

    def __init__(self):
        self.counts = Counter()
        self.phase = self.EVAL
        self.transfer_ids = set()

    @contextlib.contextmanager
    def during(self, phase):
        prev, self.phase = self.phase, phase
        try:
            yield
        finally:
            self.phase = prev

    def leakage(self) -> int:
        """Reads of transfer-task data outside evaluation."""
        return sum(n for (t, ph), n in self.counts.items() if t in self.transfer_ids and ph != self.EVAL)


class TrackedBatch:
    """Read-through view of a :class:`Batch` that reports every data access."""

    def __init__(self, batch: Batch, task_id, access_log: AccessLog):
        self._batch = batch
        self._task_id = task_id
        self._log = access_log

    def _touch(self):
        self._log.counts[(self._task_id, self._log.phase)] += 1

    @property
    def inputs(self):
        self._touch()
        return self._batch.inputs

    @property
    def labels(self):
        self._touch()
        return self._batch.labels

    def __len__(self):
        return len(self._batch)

    def subset(self, idx):
        self._touch()
        return self._batch.subset(idx)


def run_protocol(net0: Network, source, transfers: Sequence, method: str, q_grid: Sequence[float],
                 schedule: SgdSchedule, seed: int, probes, access_log: Optional[AccessLog] = None,
                 apply_obs_update=False, exact_max_params=hs.EXACT_MAX_PARAMS, rng_seed=None):
    """Evaluate one scoring method over a sparsity grid.

    ``source`` and ``transfers`` are ``(task_id, Batch)`` pairs, ``probes``
    maps task ids to probes fitted on ``net0``'s features, and ``q_grid``
    holds sparsity fractions.  Returns one record per task for the unpruned
    stage and two per task per sparsity.  Re-training draws its minibatch
    order from ``rng_seed`` (default ``seed``); records carry ``seed``.
    """
    access_log = access_log if access_log is not None else AccessLog()
    src_id = source[0]
    access_log.transfer_ids.update(t for t, _ in transfers)
    data = {t: TrackedBatch(b, t, access_log) for t, b in [source, *transfers]}
    role = {t: ("source" if t == src_id else "transfer") for t in data}
    missing = [t for t in data if t not in probes]
    if missing:
        raise KeyError(f"no probe fitted for tasks {missing}")
    frozen = {t: probes[t].digest() for t in data}
    net0 = net0.with_heads({t: probes[t].xi for t in data})

    def eval_all(net, stage, q):
        with access_log.during(AccessLog.EVAL):
            return [EvalRecord(method, q, t, role[t], stage, evaluate(net, probes[t], data[t]), seed) for t in data]

    records = eval_all(net0, "unpruned", 0.0)
    if not q_grid:
        return records
    src = data[src_id]
    with access_log.during("scoring"):
        scores = compute_scores(method, net0, src, src_id, seed=seed, exact_max_params=exact_max_params)
    rng = np.random.default_rng(seed if rng_seed is None else rng_seed)
    for q in q_grid:
        with access_log.during("masking"):
            mask = topk_mask(scores, q)
            pruned = apply_mask(net0, mask)
        records += eval_all(pruned, "pruned", q)
        start = pruned
        with access_log.during("retraining"):
            if apply_obs_update and q > 0:
                start = _obs_start(net0, src, src_id, mask, method, exact_max_params)
            tuned, _ = retrain(start, mask, src, src_id, schedule, seed=int(rng.integers(2**63)))
        records += eval_all(tuned, "pruned_finetuned", q)
    if any(probes[t].digest() != frozen[t] for t in data):
        raise RuntimeError("a probe changed during the protocol")
    return records


def _obs_start(net0, src, task, mask, method, max_params):
    """Dense weights moved by the joint OBS update for the pruned set, then re-masked."""
    pruned_idx = np.flatnonzero(~mask.bits)
    if method == "exact_obs":
        curv = hs.exact_hessian(net0, src, task, max_params=max_params)
    else:
        curv = hs.BlockInverse(hs.kfac_factors(net0, src, task))
    delta = obs_update_set(net0.W, curv, pruned_idx)
    return net0.with_weights(np.where(mask.bits, net0.W + delta, 0.0))


def write_records_csv(path_or_file, records):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow(r.row())
    finally:
        if own:
            fh.close()


def read_records_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = []
    for r in rows[1:]:
        out.append(EvalRecord(r[0], float(r[1]), int(r[2]), r[3], r[4], float(r[5]),
                              None if r[6] in ("", "None") else int(r[6])))
    return out
