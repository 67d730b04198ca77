"""Equalised-odds post-processing as a 4-variable linear program."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .policy import IDENTITY, CalibrationJoint, FlipPolicy

# variable order: q[0,0], q[0,1], q[1,0], q[1,1]  (index yhat*2 + s)
_ID = IDENTITY.ravel()


@dataclass(frozen=True, eq=False)
class EodSolution:
    q: np.ndarray
    objective: float  # expected disagreement with y, as a fraction of calibration mass
    n_vertices: int


def eod_constraints(joint: CalibrationJoint):
    """Equality rows ``A q = 0`` (TPR and FPR parity) and the linear objective ``c q + c0``."""
    tpr0, fpr0 = joint.group_rates(0)
    tpr1, fpr1 = joint.group_rates(1)
    A = np.array([
        [1 - tpr0, -(1 - tpr1), tpr0, -tpr1],
        [1 - fpr0, -(1 - fpr1), fpr0, -fpr1],
    ])
    n = joint.counts / joint.total  # [yhat, y, s]
    # disagreement: y=1 rows lose mass q-weighted ones; y=0 rows pay for predicted ones
    c = np.array([n[h, 0, s] - n[h, 1, s] for h in (0, 1) for s in (0, 1)])
    c0 = float(n[:, 1, :].sum())
    return A, c, c0


def eod_objective(joint: CalibrationJoint, q) -> np.ndarray:
    _, c, c0 = eod_constraints(joint)
    return np.asarray(q, dtype=float).reshape(-1, 4) @ c + c0


def solve_eod_lp(joint: CalibrationJoint, tol: float = 1e-10) -> EodSolution:
    """Exact LP solution by enumerating the vertices of the feasible polytope."""
    A, c, c0 = eod_constraints(joint)
    # rows: 2 equalities, q_i >= 0, q_i <= 1
    G = np.vstack([A, np.eye(4), np.eye(4)])
    h = np.concatenate([[0.0, 0.0], np.zeros(4), np.ones(4)])
    best, best_key, n_vert = None, None, 0
    for active in combinations(range(10), 4):
        M = G[list(active)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        q = np.linalg.solve(M, h[list(active)])
        if np.any(q < -tol) or np.any(q > 1 + tol) or np.max(np.abs(A @ q)) > tol:
            continue
        q = np.clip(q, 0.0, 1.0)
        n_vert += 1
        key = (round(float(c @ q), 12), round(float(np.abs(q - _ID).sum()), 12))
        if best_key is None or key < best_key:
            best, best_key = q, key
    # the identity-free corners q = 0 and q = 1 are always feasible
    assert best is not None, "EOd LP infeasible"
    return EodSolution(best.reshape(2, 2), float(c @ best + c0), n_vert)


def fit_eod_policy(joint: CalibrationJoint, strength=1.0) -> FlipPolicy:
    return FlipPolicy(solve_eod_lp(joint).q, strength, "eod")


def post_flip_rates(joint: CalibrationJoint, q) -> np.ndarray:
    """Rows ``(TPR', FPR')`` per group after flipping with ``q``."""
    q = np.asarray(q, dtype=float).reshape(2, 2)
    out = np.empty((2, 2))
    for s in (0, 1):
        tpr, fpr = joint.group_rates(s)
        out[s] = (q[1, s] * tpr + q[0, s] * (1 - tpr), q[1, s] * fpr + q[0, s] * (1 - fpr))
    return out
