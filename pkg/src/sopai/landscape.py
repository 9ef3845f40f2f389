"""Two-parameter quadratic toys and PCA loss-surface projections.

Toy tasks share a minimum ``theta0`` and differ only in the eigenstructure of
their Hessian.  Pruning one of the two weights and re-training the other in
closed form shows when source-guided pruning helps or harms a transfer task.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

APPROXIMATIONS = ("magnitude", "diag", "block", "exact")


def rotation(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class QuadraticTask:
    theta0: np.ndarray
    eigvals: tuple
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=np.float64))
        object.__setattr__(self, "eigvals", tuple(float(e) for e in self.eigvals))
        if len(self.eigvals) != 2 or min(self.eigvals) <= 0:
            raise ValueError("a quadratic task needs two positive eigenvalues")

    @property
    def hessian(self) -> np.ndarray:
        R = rotation(self.angle)
        return R @ np.diag(self.eigvals) @ R.T

    def loss(self, theta) -> float:
        d = np.asarray(theta, dtype=np.float64) - self.theta0
        return float(d @ self.hessian @ d)

    def grad(self, theta) -> np.ndarray:
        return 2.0 * self.hessian @ (np.asarray(theta, dtype=np.float64) - self.theta0)


def quad_loss(task: QuadraticTask, theta) -> float:
    return task.loss(theta)


def toy_scores(task: QuadraticTask, approx: str) -> np.ndarray:
    """Saliency of each coordinate of ``task.theta0`` under a Hessian approximation.

    With two parameters one layer covers everything, so ``block`` and ``exact``
    coincide.
    """
    th = task.theta0
    H = task.hessian
    if approx == "magnitude":
        return th ** 2
    if approx == "diag":
        return th ** 2 * np.diag(H)
    if approx in ("block", "exact"):
        return th ** 2 / np.diag(np.linalg.inv(H))
    raise ValueError(f"unknown approximation {approx!r}; expected one of {APPROXIMATIONS}")


def pruned_coordinate(task: QuadraticTask, approx: str) -> int:
    # argmin returns the first minimum, matching the lowest-index tie rule of the masks
    return int(np.argmin(toy_scores(task, approx)))


def retrain_free_coordinate(task: QuadraticTask, theta, pruned: int) -> np.ndarray:
    """Exact minimisation of ``task.loss`` over the unpruned coordinate."""
    k = 1 - pruned
    H = task.hessian
    out = np.array(theta, dtype=np.float64)
    d = out - task.theta0
    out[k] = task.theta0[k] - H[k, pruned] * d[pruned] / H[k, k]
    return out


@dataclass
class ToyDemo:
    approx: str
    pruned: int
    scores: np.ndarray
    theta0: np.ndarray
    theta_pruned: np.ndarray
    theta_retrained: np.ndarray
    losses: dict = field(default_factory=dict)

    @property
    def transfer_improvement(self) -> float:
        """Transfer-loss decrease obtained by re-training on the source."""
        return self.losses["pruned"][1] - self.losses["retrained"][1]

    @property
    def transfer_pruning_increase(self) -> float:
        return self.losses["pruned"][1] - self.losses["theta0"][1]


def toy_prune_demo(source: QuadraticTask, transfer: QuadraticTask, approx="exact") -> ToyDemo:
    if not np.array_equal(source.theta0, transfer.theta0):
        raise ValueError("toy tasks must share their minimum")
    s = toy_scores(source, approx)
    j = int(np.argmin(s))
    th0 = source.theta0.copy()
    th_p = th0.copy()
    th_p[j] = 0.0
    th_r = retrain_free_coordinate(source, th_p, j)
    losses = {name: (source.loss(th), transfer.loss(th))
              for name, th in (("theta0", th0), ("pruned", th_p), ("retrained", th_r))}
    return ToyDemo(approx, j, s, th0, th_p, th_r, losses)


@dataclass
class LandscapeProjection:
    mean: np.ndarray
    directions: np.ndarray  # (2, p), orthonormal rows
    coords: np.ndarray      # (k, 2) projected snapshots
    labels: tuple
    grid_u: np.ndarray
    grid_w: np.ndarray
    grid_losses: dict       # name -> (res, res), indexed [i_w, i_u]
    point_losses: dict      # name -> (k,)
    metadata: dict = field(default_factory=dict)

    def reconstruct(self, u, w) -> np.ndarray:
        return self.mean + u * self.directions[0] + w * self.directions[1]


def principal_directions(X) -> tuple:
    """Mean and top-2 principal directions of the rows of ``X``.

    Uses the ``k x k`` Gram matrix of the centred rows, whose eigenvectors map
    onto those of the ``p x p`` covariance, so ``p`` can be large.  Each
    direction is signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    Xc = X - mu
    w, U = np.linalg.eigh(Xc @ Xc.T)
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    scale = max(1.0, float(np.max(np.abs(X))))
    if w[0] <= (1e-12 * scale) ** 2 * X.shape[0]:
        raise ValueError("snapshots are all equal; the projection is undefined")
    dirs = []
    for k in range(2):
        if k < w.size and w[k] > 1e-20 * w[0]:
            v = Xc.T @ U[:, k] / np.sqrt(w[k])
        else:
            # rank-1 snapshots: any unit vector orthogonal to the first direction
            v = np.zeros(X.shape[1])
            v[int(np.argmin(np.abs(dirs[0])))] = 1.0
            v -= (v @ dirs[0]) * dirs[0]
        v /= np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        dirs.append(v)
    return mu, np.array(dirs)


def _span(lo, hi):
    # an axis with no extent borrows the other axis' extent
    span = hi - lo
    top = max(float(span.max()), 1e-12)
    return np.where(span > 1e-9 * top, span, top)


def pca_project(snapshots, loss_fns: Mapping[str, Callable], resolution=101, margin=0.2, labels=None,
                metadata=None) -> LandscapeProjection:
    """Project weight snapshots onto their top-2 principal plane and tabulate losses.

    The grid spans the projected points plus ``margin`` of their extent on each
    side; every grid point is evaluated at ``mean + u v1 + w v2``.
    """
    X = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
    if X.shape[0] < 3:
        raise ValueError("need at least three snapshots")
    mu, V = principal_directions(X)
    coords = (X - mu) @ V.T
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    pad = margin * _span(lo, hi)
    gu = np.linspace(lo[0] - pad[0], hi[0] + pad[0], resolution)
    gw = np.linspace(lo[1] - pad[1], hi[1] + pad[1], resolution)
    proj = LandscapeProjection(mu, V, coords, tuple(labels or (f"s{i}" for i in range(X.shape[0]))), gu, gw, {}, {},
                               dict(metadata or {}))
    for name, fn in loss_fns.items():
        G = np.empty((resolution, resolution))
        for i, w in enumerate(gw):
            for k, u in enumerate(gu):
                G[i, k] = fn(proj.reconstruct(u, w))
        proj.grid_losses[name] = G
        proj.point_losses[name] = np.array([fn(proj.reconstruct(*c)) for c in coords])
    return proj


def plane_grid(tasks: Mapping[str, QuadraticTask], points, resolution=101, margin=0.2, labels=None,
               metadata=None) -> LandscapeProjection:
    """Loss grid directly in the ``(theta_1, theta_2)`` plane of a toy problem."""
    P = np.asarray(points, dtype=np.float64)
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = margin * _span(lo, hi)
    gu = np.linspace(lo[0] - pad[0], hi[0] + pad[0], resolution)
    gw = np.linspace(lo[1] - pad[1], hi[1] + pad[1], resolution)
    U, Wg = np.meshgrid(gu, gw)
    flat = np.stack([U.ravel(), Wg.ravel()], axis=1)
    grids, pts = {}, {}
    for name, t in tasks.items():
        d = flat - t.theta0
        grids[name] = np.einsum("ni,ij,nj->n", d, t.hessian, d).reshape(resolution, resolution)
        pts[name] = np.array([t.loss(p) for p in P])
    return LandscapeProjection(np.zeros(2), np.eye(2), P, tuple(labels or (f"s{i}" for i in range(len(P)))),
                               gu, gw, grids, pts, dict(metadata or {}))


def write_projection_csv(path, proj: LandscapeProjection, names=("source", "transfer")):
    """Grid rows ``u,w,loss_source,loss_transfer`` then a ``# snapshots`` block."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "w"] + [f"loss_{n}" for n in names])
        for i, wv in enumerate(proj.grid_w):
            for k, uv in enumerate(proj.grid_u):
                w.writerow([repr(float(uv)), repr(float(wv))] + [repr(float(proj.grid_losses[n][i, k])) for n in names])
        fh.write("# snapshots\n")
        w.writerow(["label", "u", "w"] + [f"loss_{n}" for n in names])
        for j, lab in enumerate(proj.labels):
            w.writerow([lab, repr(float(proj.coords[j, 0])), repr(float(proj.coords[j, 1]))]
                       + [repr(float(proj.point_losses[n][j])) for n in names])
    if proj.metadata:
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(proj.metadata, fh, indent=2, default=str)


def read_projection_csv(path):
    """Returns ``(grid_rows, snapshot_rows)`` as lists of dicts of floats (labels kept as str)."""
    grid, snaps, target = [], [], None
    with open(path, newline="") as fh:
        header = None
        for row in csv.reader(fh):
            if row and row[0] == "# snapshots":
                target, header = snaps, None
                continue
            if header is None:
                header = row
                target = grid if target is None else target
                continue
            target.append({k: (v if k == "label" else float(v)) for k, v in zip(header, row)})
    return grid, snaps


# Canonical panels of the toy figures: (source, transfer).
_TH0 = np.array([1.0, 0.7])
CASES = {
    "aligned": (QuadraticTask(_TH0, (4.0, 0.5), np.pi / 6), QuadraticTask(_TH0, (8.0, 1.0), np.pi / 6)),
    "misaligned": (QuadraticTask(_TH0, (4.0, 0.05), np.pi / 6), QuadraticTask(_TH0, (4.0, 0.05), np.pi / 6 + np.pi / 2)),
    "iso": (QuadraticTask(_TH0, (2.0, 2.0), 0.0), QuadraticTask(_TH0, (2.0, 2.0), 0.0)),
    # steep along the smaller weight, so magnitude pruning picks the costlier coordinate
    "diag": (QuadraticTask(_TH0, (1.0, 4.0), 0.0), QuadraticTask(_TH0, (1.0, 4.0), 0.0)),
    "cross": (QuadraticTask(_TH0, (4.0, 1.0), np.pi / 4), QuadraticTask(_TH0, (4.0, 1.0), np.pi / 4)),
}


def case_report(case: str, approx="exact", resolution=101) -> tuple:
    """Demo, plot grid and metadata for one canonical panel."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {sorted(CASES)}")
    src, tr = CASES[case]
    demo = toy_prune_demo(src, tr, approx)
    outcomes = {a: toy_prune_demo(src, tr, a) for a in APPROXIMATIONS}
    meta = {
        "case": case,
        "approx": approx,
        "pruned_coordinate": demo.pruned,
        "losses": {k: {"source": v[0], "transfer": v[1]} for k, v in demo.losses.items()},
        "p1_argmin_agreement": pruned_coordinate(src, approx) == pruned_coordinate(tr, approx),
        "criteria_outcomes": {a: {"pruned_coordinate": d.pruned, "source_loss_pruned": d.losses["pruned"][0],
                                  "source_loss_retrained": d.losses["retrained"][0]} for a, d in outcomes.items()},
        "equal_loss_across_criteria": bool(np.ptp([d.losses["pruned"][0] for d in outcomes.values()]) < 1e-12),
        "transfer_improvement": demo.transfer_improvement,
    }
    proj = plane_grid({"source": src, "transfer": tr}, [demo.theta0, demo.theta_pruned, demo.theta_retrained],
                      resolution, labels=("theta0", "pruned", "retrained"), metadata=meta)
    return demo, proj, meta
