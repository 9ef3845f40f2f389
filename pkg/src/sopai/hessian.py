"""Curvature of the source-task loss around the pre-trained weights.

Four estimates are available: a finite-difference exact Hessian (small
networks only), Hessian-vector products, the diagonal empirical Fisher and
per-layer Kronecker factors ``A_l (x) B_l`` of the empirical Fisher.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import SingularCurvatureError, SizeLimitError
from .net import Batch, Network, grad, layer_activations_and_presignals

EXACT_MAX_PARAMS = 512
HESSIAN_FD_STEP = 1e-4
DEFAULT_REL_DAMPING = 1e-4


def fd_hessian(grad_fn: Callable[[np.ndarray], np.ndarray], theta, step=HESSIAN_FD_STEP, symmetrize=True):
    """Row ``i`` is the central difference of ``grad_fn`` along coordinate ``i``."""
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.shape[0]
    H = np.empty((p, p))
    e = np.zeros(p)
    for i in range(p):
        e[i] = step
        H[i] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2 * step)
        e[i] = 0.0
    return 0.5 * (H + H.T) if symmetrize else H


def _net_grad_fn(net, batch, task):
    return lambda W: grad(net.with_weights(W), batch, task)


def exact_hessian(net: Network, batch: Batch, task, step=HESSIAN_FD_STEP, max_params=EXACT_MAX_PARAMS,
                  symmetrize=True) -> np.ndarray:
    """Dense Hessian of the mean MSE w.r.t. the encoder weights.

    Costs ``2 p`` backward passes and ``p^2`` memory, so it refuses networks
    with more than ``max_params`` weights.
    """
    if net.n_params > max_params:
        raise SizeLimitError(f"exact Hessian capped at {max_params} parameters, network has {net.n_params}")
    return fd_hessian(_net_grad_fn(net, batch, task), net.W, step, symmetrize)


def hvp(net: Network, batch: Batch, task, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    eps = 1e-4 / max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    g = _net_grad_fn(net, batch, task)
    return (g(net.W + eps * v) - g(net.W - eps * v)) / (2 * eps)


def fisher_diag(net: Network, batch: Batch, task) -> np.ndarray:
    """Mean over examples of squared per-example gradients.

    Uses ``(a (x) g)^2 = a^2 (x) g^2`` so the ``n x p`` gradient matrix is never formed.
    """
    n = len(batch)
    return np.concatenate(
        [((a * a).T @ (g * g)).ravel() / n for a, g in layer_activations_and_presignals(net, batch, task)]
    )


def kfac_factors(net: Network, batch: Batch, task):
    """Per layer ``(A_l, B_l)``: second moments of layer inputs and of ``dL/dz_l``."""
    n = len(batch)
    return [(a.T @ a / n, g.T @ g / n) for a, g in layer_activations_and_presignals(net, batch, task)]


def relative_damping(M, rel=DEFAULT_REL_DAMPING, floor=1e-12) -> float:
    return max(rel * float(np.trace(M)) / M.shape[0], floor)


def _spd_inverse(M, lam, name):
    Md = M + lam * np.eye(M.shape[0])
    w = np.linalg.eigvalsh(Md)
    if w[0] <= 1e-14 * max(1.0, abs(w[-1])):
        hint = "use a nonzero damping" if lam == 0 else "increase the damping"
        raise SingularCurvatureError(f"{name} is singular at damping {lam:g} (min eigenvalue {w[0]:.3g}); {hint}")
    c = linalg.cho_factor(Md, lower=True)
    inv = linalg.cho_solve(c, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


class BlockInverse:
    """Inverse of the block-diagonal Kronecker curvature.

    ``damping=None`` damps every factor by ``1e-4 * trace / dim``; a number is
    used as an absolute ``lambda`` on all factors.  Inverse columns are only
    materialised on request.
    """

    def __init__(self, blocks: Sequence, damping: Optional[float] = None):
        self.blocks = [(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64)) for A, B in blocks]
        self.damping = damping
        self.inverses = []
        for l, (A, B) in enumerate(self.blocks):
            la = relative_damping(A) if damping is None else damping
            lb = relative_damping(B) if damping is None else damping
            self.inverses.append((_spd_inverse(A, la, f"A[{l}]"), _spd_inverse(B, lb, f"B[{l}]")))
        self.sizes = [A.shape[0] * B.shape[0] for A, B in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    @property
    def n_params(self):
        return int(self.offsets[-1])

    def diag(self) -> np.ndarray:
        """``[H^-1]_jj = [A^-1]_rr [B^-1]_ss`` for every parameter."""
        return np.concatenate([np.outer(np.diag(Ai), np.diag(Bi)).ravel() for Ai, Bi in self.inverses])

    def locate(self, j):
        l = int(np.searchsorted(self.offsets, j, side="right") - 1)
        if not 0 <= j < self.n_params:
            raise IndexError(f"parameter {j} out of range")
        r, s = divmod(int(j - self.offsets[l]), self.blocks[l][1].shape[0])
        return l, r, s

    def layer_column(self, j):
        """Layer index and column ``j`` of that layer's inverse block."""
        l, r, s = self.locate(j)
        Ai, Bi = self.inverses[l]
        return l, np.kron(Ai[:, r], Bi[:, s])

    def column(self, j) -> np.ndarray:
        l, col = self.layer_column(j)
        out = np.zeros(self.n_params)
        out[self.offsets[l]:self.offsets[l + 1]] = col
        return out

    def layer_dense(self, l) -> np.ndarray:
        Ai, Bi = self.inverses[l]
        return np.kron(Ai, Bi)


def block_inverse_stats(blocks, damping=None):
    """Diagonal of the Kronecker-block inverse plus the object serving its columns."""
    inv = BlockInverse(blocks, damping)
    return inv.diag(), inv


@dataclass
class CurvatureEstimate:
    kind: str
    exact: Optional[np.ndarray] = None
    diag: Optional[np.ndarray] = None
    blocks: Optional[list] = None
    damping: float = 0.0

    KINDS = ("exact", "isotropic", "diagonal", "kronecker")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown curvature kind {self.kind!r}")

    def stored_floats(self) -> int:
        if self.kind == "exact":
            return self.exact.size
        if self.kind == "diagonal":
            return self.diag.size
        if self.kind == "kronecker":
            return sum(A.size + B.size for A, B in self.blocks)
        return 0

    def dump_text(self, path):
        """Space-separated decimal rows; ``#`` lines label each matrix."""
        with open(path, "w") as fh:
            fh.write(f"# kind {self.kind} damping {self.damping!r}\n")
            if self.kind == "exact":
                _write_matrix(fh, "H", self.exact)
            elif self.kind == "diagonal":
                _write_matrix(fh, "diag", self.diag[None, :])
            elif self.kind == "kronecker":
                for l, (A, B) in enumerate(self.blocks):
                    _write_matrix(fh, f"A[{l}]", A)
                    _write_matrix(fh, f"B[{l}]", B)

    @classmethod
    def load_text(cls, path):
        mats, name, rows = {}, None, []
        kind, damping = None, 0.0
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("# kind"):
                    _, _, kind, _, damping = line.split()
                    damping = float(damping)
                elif line.startswith("#"):
                    if name is not None:
                        mats[name] = np.array(rows)
                    name, rows = line[1:].split()[0], []
                elif line:
                    rows.append([float(v) for v in line.split()])
        if name is not None:
            mats[name] = np.array(rows)
        if kind == "exact":
            return cls(kind, exact=mats["H"], damping=damping)
        if kind == "diagonal":
            return cls(kind, diag=mats["diag"][0], damping=damping)
        if kind == "kronecker":
            n = len(mats) // 2
            return cls(kind, blocks=[(mats[f"A[{l}]"], mats[f"B[{l}]"]) for l in range(n)], damping=damping)
        return cls(kind, damping=damping)


def _write_matrix(fh, name, M):
    fh.write(f"# {name} {M.shape[0]} {M.shape[1]}\n")
    for row in np.atleast_2d(M):
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def estimate(kind, net: Network, batch: Batch, task, damping=0.0, max_params=EXACT_MAX_PARAMS) -> CurvatureEstimate:
    if kind == "exact":
        return CurvatureEstimate(kind, exact=exact_hessian(net, batch, task, max_params=max_params), damping=damping)
    if kind == "diagonal":
        return CurvatureEstimate(kind, diag=fisher_diag(net, batch, task), damping=damping)
    if kind == "kronecker":
        return CurvatureEstimate(kind, blocks=kfac_factors(net, batch, task), damping=damping)
    return CurvatureEstimate(kind, damping=damping)
