"""Dense strictly convex QP with box constraints, primal active-set method.

    minimize 0.5 z'Hz + g'z   subject to  lb <= z <= ub

H is factorised once; each working-set change only solves a system the size
of the working set (Schur complement on the explicit inverse).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack


@dataclass
class BoxQPResult:
    z: np.ndarray
    active: np.ndarray  # -1 at lower bound, +1 at upper bound, 0 free
    iterations: int
    converged: bool
    objective: float


def _spd_inverse(H: np.ndarray) -> np.ndarray:
    c, info = lapack.dpotrf(H, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError("QP Hessian is not positive definite")
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError("inverse of QP Hessian failed")
    # dpotri fills only the lower triangle
    return np.tril(inv) + np.tril(inv, -1).T


def solve_box_qp(H, g, lb, ub, z0=None, active0=None, tol: float = 1e-8,
                 max_iter: int = 200) -> BoxQPResult:
    H = np.asarray(H, float)
    g = np.asarray(g, float)
    lb = np.asarray(lb, float)
    ub = np.asarray(ub, float)
    n = g.size
    if np.any(lb > ub):
        raise ValueError("infeasible box: lb > ub")
    Hinv = _spd_inverse(H)
    z_free = -Hinv @ g  # unconstrained minimiser

    z = np.zeros(n) if z0 is None else np.asarray(z0, float).copy()
    np.clip(z, lb, ub, out=z)
    active = np.zeros(n, dtype=np.int8)
    if active0 is not None:
        active0 = np.asarray(active0)
        active[(active0 < 0) & (z <= lb)] = -1
        active[(active0 > 0) & (z >= ub)] = 1

    scale = max(1.0, float(np.max(np.abs(g), initial=0.0)))
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        W = np.flatnonzero(active)
        if W.size:
            target = np.where(active[W] < 0, lb[W], ub[W])
            S = Hinv[np.ix_(W, W)]
            lam = np.linalg.solve(S, target - z_free[W])
            cand = z_free + Hinv[:, W] @ lam
            cand[W] = target
        else:
            lam = np.zeros(0)
            cand = z_free.copy()

        step = cand - z
        free = active == 0
        lo_hit = free & (step < 0) & (cand < lb)
        hi_hit = free & (step > 0) & (cand > ub)
        if np.any(lo_hit) or np.any(hi_hit):
            ratios = np.full(n, np.inf)
            ratios[lo_hit] = (lb[lo_hit] - z[lo_hit]) / step[lo_hit]
            ratios[hi_hit] = (ub[hi_hit] - z[hi_hit]) / step[hi_hit]
            j = int(np.argmin(ratios))
            t = min(max(ratios[j], 0.0), 1.0)
            z += t * step
            z[j] = lb[j] if lo_hit[j] else ub[j]
            active[j] = -1 if lo_hit[j] else 1
            continue

        z = cand
        if W.size == 0:
            converged = True
            break
        # gradient = lam on the working set; positive `signed` marks a wrongly held bound
        signed = lam * active[W]
        k = int(np.argmax(signed))
        if signed[k] <= tol * scale:
            converged = True
            break
        active[W[k]] = 0

    np.clip(z, lb, ub, out=z)
    obj = float(0.5 * z @ H @ z + g @ z)
    return BoxQPResult(z, active, it, converged, obj)


def projected_gradient_norm(H, g, z, lb, ub) -> float:
    """Infinity norm of the projected gradient, zero exactly at the box-QP optimum."""
    grad = H @ z + g
    pg = np.clip(z - grad, lb, ub) - z
    return float(np.max(np.abs(pg), initial=0.0))
