"""Per-parameter pruning scores and the OBS compensating update.

Second-order scores estimate the loss increase ``theta_j^2 / [H^-1]_jj`` of
removing weight ``j`` under a chosen Hessian approximation.  SNIP and GraSP
are data-driven first/second-order baselines.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from . import hessian as hs
from .errors import DimensionError, IllConditionedError, SizeLimitError
from .net import Batch, Network, grad

METHODS = ("magnitude", "diag", "block", "exact_obs", "snip", "grasp")
MAX_CONDITION = 1e12
EXACT_REL_DAMPING = 1e-6


@dataclass(frozen=True)
class ScoreVector:
    method: str
    values: np.ndarray
    source_task: object = None
    seed: Optional[int] = None
    keep_highest: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError(f"{self.method} scores must be a finite vector")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


def score_magnitude(W, **prov) -> ScoreVector:
    W = np.asarray(W, dtype=np.float64)
    return ScoreVector("magnitude", W * W, **prov)


def score_diag(W, diag, **prov) -> ScoreVector:
    W = np.asarray(W, dtype=np.float64)
    diag = np.asarray(diag, dtype=np.float64)
    if diag.shape != W.shape:
        raise DimensionError(f"curvature diagonal has {diag.shape[0]} entries, weights {W.shape[0]}")
    return ScoreVector("diag", W * W * diag, **prov)


def score_block(W, blocks, damping=None, **prov) -> ScoreVector:
    """``theta_j^2 / [A^-1 (x) B^-1]_jj`` computed layer by layer.

    ``blocks`` is either the factor list from :func:`hessian.kfac_factors`
    or an already built :class:`hessian.BlockInverse`.
    """
    inv = blocks if isinstance(blocks, hs.BlockInverse) else hs.BlockInverse(blocks, damping)
    W = np.asarray(W, dtype=np.float64)
    if inv.n_params != W.shape[0]:
        raise DimensionError(f"blocks cover {inv.n_params} parameters, weights {W.shape[0]}")
    return ScoreVector("block", W * W / inv.diag(), **prov)


def damped_inverse(H, damping=None) -> np.ndarray:
    """Inverse of ``H + lambda I``; ``damping=None`` means ``1e-6 trace(H)/p``."""
    H = np.asarray(H, dtype=np.float64)
    p = H.shape[0]
    lam = EXACT_REL_DAMPING * float(np.trace(H)) / p if damping is None else damping
    Hd = H + lam * np.eye(p)
    cond = np.linalg.cond(Hd)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(f"damped Hessian has condition {cond:.3g} > {MAX_CONDITION:g}; use a larger damping")
    # network Hessians can be indefinite, so factor with LDL^T rather than Cholesky
    try:
        inv = linalg.solve(Hd, np.eye(p), assume_a="sym")
    except linalg.LinAlgError:
        raise IllConditionedError(f"H + {lam:g} I is singular; use a larger damping") from None
    return 0.5 * (inv + inv.T)


def score_exact_obs(W, H, damping=None, **prov) -> ScoreVector:
    W = np.asarray(W, dtype=np.float64)
    if np.shape(H) != (W.shape[0], W.shape[0]):
        raise DimensionError(f"Hessian shape {np.shape(H)} does not match {W.shape[0]} weights")
    return ScoreVector("exact_obs", W * W / np.diag(damped_inverse(H, damping)), **prov)


def obs_update(W, curvature, j, damping=None) -> np.ndarray:
    """Compensating update ``-theta_j / [H^-1]_jj * H^-1[:, j]`` for removing weight ``j``.

    ``curvature`` may be a dense Hessian or a :class:`hessian.BlockInverse`.
    Coordinate ``j`` of ``W + delta`` is set to exactly zero.
    """
    W = np.asarray(W, dtype=np.float64)
    col = curvature.column(j) if isinstance(curvature, hs.BlockInverse) else damped_inverse(curvature, damping)[:, j]
    delta = -(W[j] / col[j]) * col
    delta[j] = -W[j]
    return delta


def obs_update_set(W, curvature, pruned, damping=None, max_block=4096) -> np.ndarray:
    """Joint OBS update removing every index in ``pruned`` at once.

    ``delta = -Hinv[:, P] (Hinv[P, P])^-1 theta_P``; with Kronecker blocks the
    solve runs per layer since the inverse is block diagonal.
    """
    W = np.asarray(W, dtype=np.float64)
    pruned = np.asarray(pruned, dtype=np.int64)
    delta = np.zeros_like(W)
    if pruned.size == 0:
        return delta
    if not isinstance(curvature, hs.BlockInverse):
        Hinv = damped_inverse(curvature, damping)
        _check_block(pruned.size, max_block)
        delta -= Hinv[:, pruned] @ linalg.solve(Hinv[np.ix_(pruned, pruned)], W[pruned], assume_a="sym")
        delta[pruned] = -W[pruned]
        return delta
    for l, (Ai, Bi) in enumerate(curvature.inverses):
        lo, hi = curvature.offsets[l], curvature.offsets[l + 1]
        P = pruned[(pruned >= lo) & (pruned < hi)] - lo
        if not P.size:
            continue
        _check_block(P.size, max_block)
        r, s = np.divmod(P, Bi.shape[0])
        coef = linalg.solve(Ai[np.ix_(r, r)] * Bi[np.ix_(s, s)], W[lo:hi][P], assume_a="pos")
        # sum_p coef_p kron(Ai[:, r_p], Bi[:, s_p]) == vec(Ai @ C @ Bi^T)
        Cm = np.zeros((Ai.shape[0], Bi.shape[0]))
        np.add.at(Cm, (r, s), coef)
        seg = -(Ai @ Cm @ Bi.T).ravel()
        seg[P] = -W[lo:hi][P]
        delta[lo:hi] = seg
    return delta


def _check_block(n, limit):
    if n > limit:
        raise SizeLimitError(f"joint OBS update over {n} weights exceeds the {limit} limit")


def score_snip(net: Network, batch: Batch, task, absolute=True, **prov) -> ScoreVector:
    s = grad(net, batch, task) * net.W
    return ScoreVector("snip", np.abs(s) if absolute else s, **prov)


def score_grasp(net: Network, batch: Batch, task, **prov) -> ScoreVector:
    """``-theta * (H g)``; the highest scores are removed first, as in GraSP."""
    g = grad(net, batch, task)
    Hg = hs.hvp(net, batch, task, g)
    return ScoreVector("grasp", -net.W * Hg, keep_highest=False, **prov)


def compute_scores(method, net: Network, batch: Batch, task, seed=None, exact_max_params=hs.EXACT_MAX_PARAMS,
                   snip_absolute=True, damping=None) -> ScoreVector:
    """Score ``net`` for ``method`` using only ``batch`` from ``task``."""
    prov = dict(source_task=task, seed=seed)
    if method == "magnitude":
        return score_magnitude(net.W, **prov)
    if method == "diag":
        return score_diag(net.W, hs.fisher_diag(net, batch, task), **prov)
    if method == "block":
        return score_block(net.W, hs.kfac_factors(net, batch, task), damping, **prov)
    if method == "exact_obs":
        H = hs.exact_hessian(net, batch, task, max_params=exact_max_params)
        return score_exact_obs(net.W, H, damping, **prov)
    if method == "snip":
        return score_snip(net, batch, task, absolute=snip_absolute, **prov)
    if method == "grasp":
        return score_grasp(net, batch, task, **prov)
    raise ValueError(f"unknown scoring method {method!r}; expected one of {METHODS}")


def write_scores_csv(path, net: Network, *scores: ScoreVector):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param_index", "layer", "row", "col", "method", "score"])
        for sv in scores:
            if len(sv) != net.n_params:
                raise DimensionError(f"{sv.method} scores have length {len(sv)}, network has {net.n_params}")
            for l, (sl, spec) in enumerate(zip(net.layer_slices(), net.layers)):
                for k, v in enumerate(sv.values[sl]):
                    r, c = divmod(k, spec.out_dim)
                    w.writerow([sl.start + k, l, r, c, sv.method, repr(float(v))])
