"""Self-checks comparing the fast paths against brute-force references.

Each check returns a list of :class:`OracleResult`; a check passes when every
measured deviation is within its tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hessian as hs
from .net import Batch, batch_loss, grad, init_network, per_example_grads
from .probe import fit_ridge, ridge_objective
from .saliency import obs_update, score_exact_obs

CHECKS = ("gradient", "hessian", "obs", "kfac", "ridge")


@dataclass
class OracleResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tolerance)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<44s} dev={self.deviation:.3e}  tol={self.tolerance:.0e}"


def _toy_problem(dims, n=6, seed=0):
    rng = np.random.default_rng(seed)
    net = init_network(dims, {"t": dims[-1]}, seed=seed)
    return net, Batch(rng.normal(size=(n, dims[0])), rng.integers(0, dims[-1], n))


def spd(rng, p, floor=0.5):
    M = rng.normal(size=(p, p))
    return M @ M.T / p + floor * np.eye(p)


def constrained_increase(H, theta, j):
    """Minimum of ``d^T H d`` over ``d`` with ``d_j = -theta_j``, by solving for the free block."""
    p = H.shape[0]
    free = np.array([i for i in range(p) if i != j], dtype=int)
    d = np.zeros(p)
    d[j] = -theta[j]
    if free.size:
        d[free] = -np.linalg.solve(H[np.ix_(free, free)], H[free, j] * d[j])
    return float(d @ H @ d), d


def check_gradient():
    out = []
    for dims in ((2, 4, 3), (3, 5, 4, 2), (4, 3)):
        net, b = _toy_problem(dims)
        g = grad(net, b, "t")
        h = 1e-5
        fd = np.empty_like(g)
        for i in range(g.size):
            e = np.zeros_like(g)
            e[i] = h
            up = batch_loss(net.with_weights(net.W + e), b, "t")
            down = batch_loss(net.with_weights(net.W - e), b, "t")
            fd[i] = (up - down) / (2 * h)
        out.append(OracleResult(f"grad vs central FD {dims}", float(np.max(np.abs(g - fd))), 1e-6))
        pe = per_example_grads(net, b, "t")
        out.append(OracleResult(f"grad = mean per-example {dims}", float(np.max(np.abs(pe.mean(0) - g))), 1e-12))
    return out


def check_hessian():
    net, b = _toy_problem((2, 4, 3))
    raw = hs.exact_hessian(net, b, "t", symmetrize=False)
    H = 0.5 * (raw + raw.T)
    v = np.random.default_rng(1).normal(size=net.n_params)
    Hv = hs.hvp(net, b, "t", v)
    return [
        OracleResult("exact Hessian symmetry defect", float(np.max(np.abs(raw - raw.T))), 1e-5),
        OracleResult("hvp vs exact Hessian (relative)", float(np.linalg.norm(Hv - H @ v) / np.linalg.norm(H @ v)), 1e-3),
    ]


def check_obs(n_problems=100):
    rng = np.random.default_rng(0)
    score_dev = update_dev = 0.0
    for _ in range(n_problems):
        p = int(rng.integers(2, 11))
        H = spd(rng, p)
        theta = rng.normal(size=p)
        eps = score_exact_obs(theta, H, damping=0.0).values
        for j in range(p):
            ref, _ = constrained_increase(H, theta, j)
            score_dev = max(score_dev, abs(eps[j] - ref) / abs(ref))
            d = obs_update(theta, H, j, damping=0.0)
            update_dev = max(update_dev, abs(float(d @ H @ d) - ref) / abs(ref))
    return [OracleResult("OBS score vs constrained minimum (relative)", score_dev, 1e-8),
            OracleResult("OBS update reaches constrained minimum", update_dev, 1e-8)]


def check_kfac():
    rng = np.random.default_rng(0)
    dev = 0.0
    for m, h in ((2, 3), (4, 4), (8, 8)):
        A, B = spd(rng, m), spd(rng, h)
        inv = hs.BlockInverse([(A, B)], damping=0.0)
        P = np.kron(A, B) @ np.kron(*inv.inverses[0])
        dev = max(dev, float(np.max(np.abs(P - np.eye(m * h)))))
    net, b = _toy_problem((3, 4, 2), n=1)
    g = per_example_grads(net, b, "t")[0]
    blk = 0.0
    for (A, B), sl in zip(hs.kfac_factors(net, b, "t"), net.layer_slices()):
        blk = max(blk, float(np.max(np.abs(np.kron(A, B) - np.outer(g[sl], g[sl])))))
    return [OracleResult("(A (x) B)(A^-1 (x) B^-1) = I", dev, 1e-8),
            OracleResult("single-sample K-FAC = gradient outer product", blk, 1e-10)]


def gd_ridge(Phi, Y, alpha, tol=1e-13, max_iter=200_000):
    """Plain gradient descent on the ridge objective with step ``1/L``."""
    L = 2 * (np.linalg.norm(Phi, 2) ** 2 + alpha)
    xi = np.zeros((Phi.shape[1], Y.shape[1]))
    for _ in range(max_iter):
        g = 2 * (Phi.T @ (Phi @ xi - Y) + alpha * xi)
        xi -= g / L
        if np.max(np.abs(g)) < tol:
            break
    return xi


def check_ridge():
    rng = np.random.default_rng(0)
    Phi = rng.normal(size=(40, 8))
    Y = np.eye(4)[rng.integers(0, 4, 40)]
    xi = fit_ridge(Phi, Y, 1.0)
    normal = float(np.max(np.abs((Phi.T @ Phi + np.eye(8)) @ xi - Phi.T @ Y)))
    gd = gd_ridge(Phi, Y, 1.0)
    xi_i = fit_ridge(np.eye(5), np.eye(5)[:, :3], 1.0)
    return [OracleResult("ridge normal equations", normal, 1e-8),
            OracleResult("ridge closed form vs gradient descent", float(np.max(np.abs(xi - gd))), 1e-6),
            OracleResult("Phi = I, alpha = 1 gives Y/2", float(np.max(np.abs(xi_i - np.eye(5)[:, :3] / 2))), 0.0),
            OracleResult("ridge objective at closed form <= GD", max(0.0, ridge_objective(Phi, Y, xi) - ridge_objective(Phi, Y, gd)), 1e-10)]


def run_check(name):
    fns = dict(gradient=check_gradient, hessian=check_hessian, obs=check_obs, kfac=check_kfac, ridge=check_ridge)
    if name not in fns:
        raise ValueError(f"unknown check {name!r}; expected one of {CHECKS}")
    return fns[name]()
