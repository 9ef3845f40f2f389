"""Multi-head pre-training and mask-respecting re-training."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import TrainingDivergedError
from .masking import PruneMask
from .net import Batch, LayerSpec, Network, batch_loss, grad, head_grad, predict


@dataclass(frozen=True)
class SgdSchedule:
    epochs: int = 90
    lr: float = 5e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: tuple = (30, 60, 80)
    decay_factor: float = 0.1
    batch_size: int = 50

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        d = self.decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])) or (d and (d[0] < 0 or d[-1] >= max(self.epochs, 1))):
            raise ValueError(f"decay epochs {d} must be strictly increasing and below {self.epochs}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_factor ** sum(epoch >= e for e in self.decay_epochs)

    def scaled(self, epochs: int) -> "SgdSchedule":
        """Same schedule shape compressed or stretched to ``epochs``."""
        if self.epochs == 0:
            return SgdSchedule(epochs, self.lr, self.momentum, self.weight_decay, (), self.decay_factor, self.batch_size)
        dec = sorted({int(round(e * epochs / self.epochs)) for e in self.decay_epochs} - {0})
        dec = tuple(e for e in dec if e < epochs)
        return SgdSchedule(epochs, self.lr, self.momentum, self.weight_decay, dec, self.decay_factor, self.batch_size)


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    grad_norm: Optional[float] = None
    accuracy: dict = field(default_factory=dict)
    epochs_run: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for e, loss in enumerate(self.losses):
                w.writerow([e, f"{loss:.10g}"])


def _minibatches(rng, n, size):
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


def _check_finite(loss, epoch):
    if not np.isfinite(loss):
        raise TrainingDivergedError(epoch, loss)


def pretrain(net: Network, tasks: Mapping, schedule: SgdSchedule, seed=0, train_heads=True,
             grad_tol: Optional[float] = None):
    """Jointly fit the encoder and every task head on the union of ``tasks``.

    ``tasks`` maps task ids to their training :class:`Batch`.  Each step uses a
    minibatch from a single task; the order of (task, minibatch) pairs is
    reshuffled every epoch from ``seed``.  Stops early once the full-batch
    encoder gradient norm drops below ``grad_tol``.
    """
    missing = [t for t in tasks if t not in net.heads]
    if missing:
        raise KeyError(f"no heads attached for tasks {missing}")
    rng = np.random.default_rng(seed)
    W = net.W.copy()
    heads = {t: xi.copy() for t, xi in net.heads.items()}
    vW = np.zeros_like(W)
    vH = {t: np.zeros_like(xi) for t, xi in heads.items()}
    hist = TrainHistory()
    keys = list(tasks)
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        steps = [(t, idx) for t in keys for idx in _minibatches(rng, len(tasks[t]), schedule.batch_size)]
        order = rng.permutation(len(steps))
        total = 0.0
        for s in order:
            t, idx = steps[s]
            mb = tasks[t].subset(idx)
            cur = Network(net.layers, W, heads)
            total += batch_loss(cur, mb, t) * len(idx)
            gW = grad(cur, mb, t) + schedule.weight_decay * W
            vW = schedule.momentum * vW + gW
            if train_heads:
                gH = head_grad(cur, mb, t) + schedule.weight_decay * heads[t]
                vH[t] = schedule.momentum * vH[t] + gH
                heads[t] = heads[t] - lr * vH[t]
            W = W - lr * vW
        loss = total / sum(len(b) for b in tasks.values())
        _check_finite(loss, epoch)
        hist.losses.append(loss)
        hist.epochs_run = epoch + 1
        if grad_tol is not None:
            cur = Network(net.layers, W, heads)
            gn = float(np.sqrt(sum(np.sum(grad(cur, b, t) ** 2) for t, b in tasks.items())))
            hist.grad_norm = gn
            if gn < grad_tol:
                break
    out = Network(net.layers, W, heads)
    hist.accuracy = {t: float(np.mean(predict(out, b.inputs, t) == b.labels)) for t, b in tasks.items()}
    return out, hist


def retrain(net: Network, mask: PruneMask, batch: Batch, task, schedule: SgdSchedule, seed=0):
    """SGD on the source task with the head frozen and pruned weights pinned at zero.

    Gradients are multiplied by the mask before the momentum/decay update, so
    a coordinate that starts at zero never moves.
    """
    c = mask.bits.astype(np.float64)
    if np.any(net.W[~mask.bits] != 0.0):
        raise ValueError("retrain expects a network already masked with `mask`")
    rng = np.random.default_rng(seed)
    W = net.W.copy()
    v = np.zeros_like(W)
    hist = TrainHistory()
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        total = 0.0
        for idx in _minibatches(rng, len(batch), schedule.batch_size):
            mb = batch.subset(idx)
            cur = net.with_weights(W)
            total += batch_loss(cur, mb, task) * len(idx)
            d = grad(cur, mb, task) * c + schedule.weight_decay * W
            v = schedule.momentum * v + d
            W = W - lr * v
        loss = total / len(batch)
        _check_finite(loss, epoch)
        hist.losses.append(loss)
        hist.epochs_run = epoch + 1
        assert not np.any(W[~mask.bits]), "pruned weight resurrected"
    return net.with_weights(W), hist


def save_checkpoint(path, net: Network, seed=None, schedule: Optional[SgdSchedule] = None):
    with open(path, "w") as fh:
        fh.write("# sopai checkpoint v1\n")
        fh.write("# layers " + " ".join(
            f"{s.in_dim}x{s.out_dim}:{'relu' if s.has_activation else 'linear'}" for s in net.layers) + "\n")
        fh.write(f"# seed {seed}\n")
        fh.write(f"# schedule {json.dumps(asdict(schedule) if schedule else None)}\n")
        for l, M in enumerate(net.matrices()):
            fh.write(f"layer {l} {M.shape[0]} {M.shape[1]}\n")
            for row in M:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        for t, xi in net.heads.items():
            fh.write(f"head {json.dumps(t)} {xi.shape[0]} {xi.shape[1]}\n")
            for row in xi:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_checkpoint(path):
    """Returns ``(network, header)`` with header keys ``seed`` and ``schedule``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    header, layers, mats, heads = {}, [], [], {}
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("# layers"):
            for tok in line.split()[2:]:
                dims, act = tok.split(":")
                m, h = dims.split("x")
                layers.append(LayerSpec(int(m), int(h), act == "relu"))
        elif line.startswith("# seed"):
            val = line.split(maxsplit=2)[2]
            header["seed"] = None if val == "None" else int(val)
        elif line.startswith("# schedule"):
            sched = json.loads(line.split(maxsplit=2)[2])
            header["schedule"] = SgdSchedule(**sched) if sched else None
        elif line.startswith("layer ") or line.startswith("head "):
            kind, rest = line.split(" ", 1)
            name, r, c = rest.rsplit(" ", 2)
            r, c = int(r), int(c)
            M = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(r)]).reshape(r, c)
            if kind == "layer":
                mats.append(M)
            else:
                heads[json.loads(name)] = M
            i += r
        i += 1
    W = np.concatenate([M.ravel() for M in mats]) if mats else np.zeros(0)
    return Network(tuple(layers), W, heads), header
