"""Global top-k masks over encoder weights."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError
from .net import Network

log = logging.getLogger(__name__)

# percent, as reported for the sparsity sweep
SPARSITY_GRID = (36.00, 47.52, 59.04, 66.42, 73.80, 78.52, 83.22)


@dataclass(frozen=True)
class PruneMask:
    bits: np.ndarray
    sparsity: float
    method: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool).ravel()
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    def __len__(self):
        return self.bits.shape[0]

    @property
    def n_kept(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def realized_sparsity(self) -> float:
        return 1.0 - self.n_kept / len(self)

    def keep_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


def n_keep(p: int, q: float) -> int:
    """``ceil((1 - q) p)``, rounded first so that e.g. ``q=0.6642, p=10^4`` gives 3358."""
    return int(math.ceil(round((1.0 - q) * p, 6)))


def ranking(scores, keep_highest=True) -> np.ndarray:
    """Indices from most to least salient; equal scores rank the lower index first."""
    v = np.asarray(getattr(scores, "values", scores), dtype=np.float64)
    idx = np.arange(v.shape[0])
    return np.lexsort((idx, -v if keep_highest else v))


def topk_mask(scores, q: float, keep_highest: Optional[bool] = None) -> PruneMask:
    """Keep the ``ceil((1-q) p)`` most salient weights.

    ``scores`` is a :class:`ScoreVector` (its ``keep_highest`` flag sets the
    direction) or a plain array.
    """
    if not 0.0 <= q < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {q}")
    if keep_highest is None:
        keep_highest = getattr(scores, "keep_highest", True)
    order = ranking(scores, keep_highest)
    bits = np.zeros(order.shape[0], dtype=bool)
    bits[order[:n_keep(order.shape[0], q)]] = True
    return PruneMask(bits, q, getattr(scores, "method", None), getattr(scores, "seed", None))


def collapsed_layers(net: Network, mask: PruneMask):
    return [l for l, s in enumerate(net.layer_slices()) if not mask.bits[s].any()]


def apply_mask(net: Network, mask: PruneMask) -> Network:
    if len(mask) != net.n_params:
        raise DimensionError(f"mask has {len(mask)} entries, network has {net.n_params} weights")
    dead = collapsed_layers(net, mask)
    if dead:
        log.warning("mask %s at q=%.4f removes every weight of layer(s) %s", mask.method, mask.sparsity, dead)
    return net.with_weights(np.where(mask.bits, net.W, 0.0))


def measured_sparsity(net: Network) -> float:
    return float(np.mean(net.W == 0.0))


def jaccard(a: PruneMask, b: PruneMask) -> float:
    """Overlap of the kept sets."""
    inter = np.count_nonzero(a.bits & b.bits)
    union = np.count_nonzero(a.bits | b.bits)
    return 1.0 if union == 0 else inter / union


def mask_to_text(mask: PruneMask) -> str:
    """Run-length encoding: header lines, then ``<bit>:<run>`` tokens."""
    b = mask.bits.astype(np.int8)
    edges = np.flatnonzero(np.diff(b)) + 1
    starts = np.concatenate([[0], edges])
    lengths = np.diff(np.concatenate([starts, [b.size]]))
    runs = " ".join(f"{b[s]}:{n}" for s, n in zip(starts, lengths)) if b.size else ""
    return (
        "# prune-mask v1\n"
        f"length {b.size}\n"
        f"sparsity {mask.sparsity!r}\n"
        f"method {mask.method}\n"
        f"seed {mask.seed}\n"
        f"runs {runs}\n"
    )


def mask_from_text(text: str) -> PruneMask:
    fields = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition(" ")
        fields[key] = val.strip()
    bits = []
    for tok in fields.get("runs", "").split():
        bit, n = tok.split(":")
        bits.extend([bit == "1"] * int(n))
    if len(bits) != int(fields["length"]):
        raise ValueError(f"mask runs cover {len(bits)} entries, header says {fields['length']}")
    method = None if fields.get("method") in (None, "None") else fields["method"]
    seed = None if fields.get("seed") in (None, "None") else int(fields["seed"])
    return PruneMask(np.array(bits, dtype=bool), float(fields["sparsity"]), method, seed)
