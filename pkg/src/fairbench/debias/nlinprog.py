"""NLinProg: post-processing by nonlinear optimisation over flip policies.

The objective is a weighted sum of performance and fairness losses of the
FACT induced by a flip policy. It is nonsmooth (``min`` inside the ratio
metric, ``abs`` inside the gap), so it is minimised by multi-start projected
gradient descent with central finite differences and step halving.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..fact import Fairness, rate_from_cells, tau_from_rates
from .policy import IDENTITY, CalibrationJoint, FlipPolicy, induced_cells

PERFORMANCE_LOSSES = ("one_minus_accuracy",)
FAIRNESS_LOSSES = ("one_minus_tau", "gap")


@dataclass(frozen=True)
class PerformanceTerm:
    loss: str = "one_minus_accuracy"
    weight: float = 1.0


@dataclass(frozen=True)
class FairnessTerm:
    definition: Fairness
    weight: float = 1.0
    loss: str = "one_minus_tau"


@dataclass(frozen=True)
class PfopObjective:
    performance_terms: tuple = (PerformanceTerm(),)
    fairness_terms: tuple = ()

    def __post_init__(self):
        perf = tuple(t if isinstance(t, PerformanceTerm) else PerformanceTerm(*t) for t in self.performance_terms)
        fair = []
        for t in self.fairness_terms:
            if not isinstance(t, FairnessTerm):
                t = FairnessTerm(*t)
            fair.append(FairnessTerm(Fairness.parse(t.definition), float(t.weight), t.loss))
        object.__setattr__(self, "performance_terms", perf)
        object.__setattr__(self, "fairness_terms", tuple(fair))
        weights = [t.weight for t in perf] + [t.weight for t in fair]
        if not weights:
            raise ValueError("objective needs at least one term")
        if any(w < 0 or w != w for w in weights):
            raise ValueError("multipliers must be non-negative")
        if not any(w > 0 for w in weights):
            raise ValueError("multipliers must not all be zero")
        for t in perf:
            if t.loss not in PERFORMANCE_LOSSES:
                raise ValueError(f"unknown performance loss {t.loss!r}")
        for t in fair:
            if t.loss not in FAIRNESS_LOSSES:
                raise ValueError(f"unknown fairness loss {t.loss!r}")

    @classmethod
    def simple(cls, accuracy_weight=1.0, fairness=(), loss="one_minus_tau") -> "PfopObjective":
        """``fairness`` is a sequence of (definition, multiplier)."""
        perf = (PerformanceTerm("one_minus_accuracy", accuracy_weight),) if accuracy_weight else ()
        return cls(perf, tuple(FairnessTerm(Fairness.parse(d), w, loss) for d, w in fairness))

    def evaluate(self, cells) -> np.ndarray:
        """Objective for FACT entries of shape ``(..., 8)`` (any positive scale)."""
        z = np.asarray(cells, dtype=float)
        total = z.sum(axis=-1)
        value = np.zeros(z.shape[:-1])
        for t in self.performance_terms:
            acc = (z[..., 0] + z[..., 3] + z[..., 4] + z[..., 7]) / total
            value = value + t.weight * (1.0 - acc)
        for t in self.fairness_terms:
            value = value + t.weight * fairness_loss(t.definition, t.loss, z)
        return value

    def pieces(self, cells):
        """Smooth decomposition at one FACT: ``(performance loss, [(weight, pieces)])``
        where each fairness term equals ``weight * max(pieces)`` wherever its rates
        are positive and defined."""
        z = np.asarray(cells, dtype=float)
        perf = sum(t.weight * (1.0 - (z[0] + z[3] + z[4] + z[7]) / z.sum()) for t in self.performance_terms)
        out = []
        with np.errstate(invalid="ignore", divide="ignore"):
            for t in self.fairness_terms:
                parts = []
                for d in t.definition.components:
                    h0, h1 = _rates(d, z)
                    if t.loss == "gap":
                        parts += [h1 - h0, h0 - h1]
                    else:
                        parts += [1.0 - h0 / h1, 1.0 - h1 / h0]
                out.append((t.weight, np.array(parts, dtype=float)))
        return perf, out

    def to_dict(self) -> dict:
        return {
            "performance_terms": [{"loss": t.loss, "weight": t.weight} for t in self.performance_terms],
            "fairness_terms": [{"definition": t.definition.value, "weight": t.weight, "loss": t.loss}
                               for t in self.fairness_terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PfopObjective":
        perf = tuple(PerformanceTerm(t.get("loss", "one_minus_accuracy"), float(t["weight"]))
                     for t in d.get("performance_terms", ()))
        fair = tuple(FairnessTerm(Fairness.parse(t["definition"]), float(t["weight"]),
                                  t.get("loss", "one_minus_tau")) for t in d.get("fairness_terms", ()))
        return cls(perf, fair)


def _rates(definition, z):
    h0 = rate_from_cells(definition, z[..., 0], z[..., 1], z[..., 2], z[..., 3])
    h1 = rate_from_cells(definition, z[..., 4], z[..., 5], z[..., 6], z[..., 7])
    return h0, h1


def fairness_loss(definition, loss, z) -> np.ndarray:
    """``1 - tau`` or the gap; undefined cells score the worst value 1."""
    definition = Fairness.parse(definition)
    parts = (Fairness.EOp, Fairness.PE) if definition is Fairness.EOd else (definition,)
    out = None
    with np.errstate(invalid="ignore", divide="ignore"):
        for p in parts:
            h0, h1 = _rates(p, z)
            if loss == "one_minus_tau":
                v = 1.0 - tau_from_rates(h0, h1)
            else:
                v = np.abs(h1 - h0)
            v = np.where(np.isnan(v), 1.0, v)
            out = v if out is None else np.maximum(out, v)
    return out


@dataclass(frozen=True)
class SolverConfig:
    n_random_starts: int = 8
    seed: int = 0
    fd_step: float = 1e-5
    initial_step: float = 0.25
    min_step: float = 1e-7
    max_iter: int = 500
    polish: bool = True
    polish_points: int = 5
    refine_iter: int = 300
    polish_radius: int = 3
    polish_initial_step: float = 0.01
    polish_iter: int = 400
    polish_min_step: float = 1e-9


@dataclass(frozen=True, eq=False)
class SolverResult:
    x: np.ndarray
    objective: float
    start_index: int
    starts: np.ndarray = field(repr=False)
    start_objectives: np.ndarray = field(repr=False)
    final_objectives: np.ndarray = field(repr=False)
    iterations: np.ndarray = field(repr=False)
    ends: np.ndarray = field(default=None, repr=False)


def projected_descent(f, starts, project, cfg: SolverConfig, fd_project=None) -> SolverResult:
    """Minimise batched ``f`` from every start at once.

    ``f`` maps ``(m, k)`` points to ``(m,)`` values. Each start keeps its own
    step; a step that fails to improve is halved. Finite-difference probes
    are passed through ``fd_project`` (defaults to ``project``).
    """
    fd_project = fd_project or project
    x = np.array(starts, dtype=float)
    m, k = x.shape
    fx = f(x)
    f0 = fx.copy()
    step = np.full(m, cfg.initial_step)
    iters = np.zeros(m, dtype=np.int64)
    eye = np.eye(k) * cfg.fd_step
    for _ in range(cfg.max_iter):
        active = step >= cfg.min_step
        if not active.any():
            break
        xa = x[active]
        probes = np.concatenate([xa[:, None, :] + eye, xa[:, None, :] - eye], axis=1)
        probes = fd_project(probes.reshape(-1, k)).reshape(-1, 2 * k, k)
        vals = f(probes.reshape(-1, k)).reshape(-1, 2, k)
        dist = np.einsum("ijk,ijk->ij", probes[:, :k] - probes[:, k:], probes[:, :k] - probes[:, k:]) ** 0.5
        with np.errstate(invalid="ignore", divide="ignore"):
            grad = np.where(dist > 0, (vals[:, 0] - vals[:, 1]) / dist, 0.0)
        cand = project(xa - step[active, None] * grad)
        fc = f(cand)
        better = fc < fx[active]
        idx = np.flatnonzero(active)
        x[idx[better]] = cand[better]
        fx[idx[better]] = fc[better]
        step[idx[~better]] *= 0.5
        iters[idx] += 1
    best = int(np.argmin(fx))  # lowest index among ties
    return SolverResult(x[best].copy(), float(fx[best]), best, np.array(starts, dtype=float), f0, fx, iters, x)


def _offsets(k: int, radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1, dtype=float)
    return np.array(np.meshgrid(*[r] * k, indexing="ij")).reshape(k, -1).T


def lattice_polish(f, points, project, cfg: SolverConfig):
    """Local lattice search: evaluate ``x + h * {-r..r}^k`` and move to the best
    point; halve ``h`` when the centre is already best.

    Finite-difference descent stalls on kinks that are not aligned with a
    coordinate axis; the full local lattice contains near-aligned directions.
    """
    x = np.array(points, dtype=float)
    m, k = x.shape
    radius = cfg.polish_radius if k <= 4 else 1
    off = _offsets(k, radius)
    off = off[np.any(off != 0, axis=1)]
    fx = f(x)
    step = np.full(m, cfg.polish_initial_step)
    for _ in range(cfg.polish_iter):
        active = step >= cfg.polish_min_step
        if not active.any():
            break
        idx = np.flatnonzero(active)
        cand = project((x[idx, None, :] + step[idx, None, None] * off[None]).reshape(-1, k))
        fc = f(cand).reshape(len(idx), -1)
        j = np.argmin(fc, axis=1)
        better = fc[np.arange(len(idx)), j] < fx[idx]
        win = idx[better]
        x[win] = cand.reshape(len(idx), -1, k)[better, j[better]]
        fx[win] = fc[better, j[better]]
        step[idx[~better]] *= 0.5
    return x, fx


def epigraph_refine(objective: PfopObjective, to_cells, x0, bounds, equality=None, maxiter=300):
    """SLSQP on the epigraph form: every fairness term is a max of smooth
    pieces, so ``min perf + sum w_k t_k  s.t.  t_k >= piece`` is smooth.

    Returns the refined point, or ``None`` when the pieces are not finite
    (undefined rates) or the solver fails.
    """
    from scipy.optimize import minimize

    k = len(x0)
    perf0, terms0 = objective.pieces(to_cells(x0))
    if not all(np.all(np.isfinite(p)) for _, p in terms0):
        return None
    weights = np.array([w for w, _ in terms0])

    def parts(x):
        perf, terms = objective.pieces(to_cells(x[:k]))
        return perf, terms

    def fun(x):
        return parts(x)[0] + weights @ x[k:]

    def ineq(x):
        _, terms = parts(x)
        vals = np.concatenate([x[k + i] - p for i, (_, p) in enumerate(terms)]) if terms else np.zeros(0)
        return np.nan_to_num(vals, nan=-1e6, posinf=-1e6, neginf=-1e6)

    t0 = np.array([p.max() for _, p in terms0])
    cons = [{"type": "ineq", "fun": ineq}] if len(t0) else []
    if equality is not None:
        cons.append({"type": "eq", "fun": lambda x: equality(x[:k])})
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        try:
            res = minimize(fun, np.concatenate([x0, t0]), method="SLSQP",
                           bounds=list(bounds) + [(None, None)] * len(t0), constraints=cons,
                           options={"ftol": 1e-13, "maxiter": maxiter})
        except (ValueError, ArithmeticError):
            return None
    x = res.x[:k]
    return x if np.all(np.isfinite(x)) else None


def _minimise(f, starts, project, cfg: SolverConfig, fd_project=None, refine=None) -> SolverResult:
    """Projected-gradient multi-start, then smooth epigraph refinement and a
    local lattice polish of the best few end points. Every candidate is scored
    with the true objective ``f``; ties go to the lowest start index."""
    res = projected_descent(f, starts, project, cfg, fd_project)
    if not cfg.polish:
        return res
    order = np.argsort(res.final_objectives, kind="stable")[:cfg.polish_points]
    ends, finals = res.ends.copy(), res.final_objectives.copy()
    if refine is not None:
        for i in order:
            x = refine(ends[i])
            if x is None:
                continue
            x = project(x[None])[0]
            fx = f(x[None])[0]
            if fx < finals[i]:
                ends[i], finals[i] = x, fx
    xs, fs = lattice_polish(f, ends[order], project, cfg)
    ends[order], finals[order] = xs, fs
    best = int(np.argmin(finals))
    return SolverResult(ends[best].copy(), float(finals[best]), best, res.starts, res.start_objectives,
                        finals, res.iterations, ends)


def _policy_starts(cfg: SolverConfig) -> np.ndarray:
    lattice = np.array(np.meshgrid(*[[0.25, 0.75]] * 4, indexing="ij")).reshape(4, -1).T
    rng = np.random.default_rng(cfg.seed)
    return np.vstack([lattice, IDENTITY.ravel()[None, :], rng.random((cfg.n_random_starts, 4))])


def solve_nlinprog(joint: CalibrationJoint, objective: PfopObjective, cfg: SolverConfig = SolverConfig()) -> SolverResult:
    counts = joint.counts / joint.total
    box = lambda q: np.clip(q, 0.0, 1.0)
    f = lambda q: objective.evaluate(induced_cells(counts, q.reshape(-1, 2, 2)))
    to_cells = lambda q: induced_cells(counts, np.clip(q, 0.0, 1.0).reshape(2, 2))
    refine = lambda q: epigraph_refine(objective, to_cells, q, [(0.0, 1.0)] * 4, maxiter=cfg.refine_iter)
    return _minimise(f, _policy_starts(cfg), box, cfg, refine=refine)


def fit_nlinprog_policy(joint: CalibrationJoint, objective: PfopObjective, strength=1.0,
                        solver_cfg: SolverConfig = SolverConfig()) -> FlipPolicy:
    res = solve_nlinprog(joint, objective, solver_cfg)
    return FlipPolicy(res.x.reshape(2, 2), strength, "nlinprog")


def policy_objective(joint: CalibrationJoint, objective: PfopObjective, q) -> float:
    return float(objective.evaluate(induced_cells(joint.counts / joint.total, np.asarray(q).reshape(2, 2))))


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex (sort and shift)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    k = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, k + 1)
    cond = u - css / ind > 0
    rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def _simplex_starts(cfg: SolverConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    vertices_mix = 0.5 * np.eye(8) + 0.5 / 8  # halfway from the barycentre to each vertex
    return np.vstack([np.full((1, 8), 1 / 8), vertices_mix, rng.dirichlet(np.ones(8), 16)])


def pfop_ideal(objective: PfopObjective, solver_cfg: SolverConfig = SolverConfig()):
    """Best FACT on the simplex for ``objective``, ignoring any classifier.

    Returns ``(z, objective value)``.
    """
    f = lambda z: objective.evaluate(z)
    nonneg = lambda z: np.clip(z, 0.0, None)
    refine = lambda z: epigraph_refine(objective, nonneg, z, [(0.0, 1.0)] * 8, equality=lambda v: v.sum() - 1.0,
                                       maxiter=solver_cfg.refine_iter)
    res = _minimise(f, _simplex_starts(solver_cfg), project_simplex, solver_cfg, fd_project=nonneg, refine=refine)
    return res.x, res.objective


def objective_from_json(text: str) -> PfopObjective:
    return PfopObjective.from_dict(json.loads(text))
