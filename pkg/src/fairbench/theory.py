"""Asymptotics of the penalised empirical risk and the bias-variance-noise
decomposition of a naive randomised debiaser.

The penalised risk of a classifier is ``lam * E[l] + (1 - lam) * phi(M_0, M_1)``
with ``l`` a loss indicator and ``M_s`` the group mean of a fairness
indicator ``mu``. Its plug-in estimate on ``m`` samples is asymptotically
normal; ``limiting_variance`` gives the variance of ``sqrt(m) * (L_D - L_P)``
and ``clt_experiment`` checks it by simulation.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fact import format_number

KINK_TOL = 1e-9


@dataclass(frozen=True)
class MomentSet:
    pi: tuple
    loss_mean: tuple
    loss_var: tuple
    fair_mean: tuple
    fair_var: tuple
    cov: tuple

    def __post_init__(self):
        for name in ("pi", "loss_mean", "loss_var", "fair_mean", "fair_var", "cov"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise ValueError(f"{name} needs one value per group")
            object.__setattr__(self, name, v)
        if min(self.pi) <= 0 or abs(sum(self.pi) - 1.0) > 1e-12:
            raise ValueError("group base rates must be positive and sum to 1")
        if min(self.loss_var) < 0 or min(self.fair_var) < 0:
            raise ValueError("variances must be non-negative")
        for s in (0, 1):
            bound = math.sqrt(self.loss_var[s] * self.fair_var[s])
            if abs(self.cov[s]) > bound * (1 + 1e-12) + 1e-15:
                raise ValueError(f"|cov| exceeds the Cauchy-Schwarz bound in group {s}")

    def total_loss_variance(self) -> float:
        """Var(l) by the law of total variance."""
        p0, p1 = self.pi
        within = p0 * self.loss_var[0] + p1 * self.loss_var[1]
        mean = p0 * self.loss_mean[0] + p1 * self.loss_mean[1]
        between = p0 * (self.loss_mean[0] - mean) ** 2 + p1 * (self.loss_mean[1] - mean) ** 2
        return within + between

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class FairPenalty:
    kind: str = "abs_diff"  # abs_diff | squared_diff | smooth_abs
    eps: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("abs_diff", "squared_diff", "smooth_abs"):
            raise ValueError(f"unknown penalty {self.kind!r}")
        if self.kind == "smooth_abs" and not self.eps > 0:
            raise ValueError("smooth_abs needs eps > 0")

    def value(self, x, y):
        d = np.subtract(x, y)
        if self.kind == "abs_diff":
            return np.abs(d)
        if self.kind == "squared_diff":
            return d * d
        return np.sqrt(d * d + self.eps ** 2)

    def gradient(self, x: float, y: float) -> tuple:
        """(d phi/dx, d phi/dy); the kink of abs_diff gets the subgradient (0, 0)."""
        d = x - y
        if self.kind == "abs_diff":
            g = 0.0 if abs(d) < KINK_TOL else math.copysign(1.0, d)
        elif self.kind == "squared_diff":
            g = 2.0 * d
        else:
            g = d / math.sqrt(d * d + self.eps ** 2)
        return g, -g

    def at_kink(self, x: float, y: float) -> bool:
        return self.kind == "abs_diff" and abs(x - y) < KINK_TOL


def _indicator(kind, y_true, y_pred):
    if not isinstance(kind, str):
        arr = np.asarray(kind, dtype=float)
        if arr.shape != y_true.shape:
            raise ValueError("indicator array length mismatch")
        return arr
    table = {
        "misclassification": y_pred != y_true,
        "positive_prediction": y_pred == 1,
        "true_positive": (y_pred == 1) & (y_true == 1),
        "false_positive": (y_pred == 1) & (y_true == 0),
        "false_negative": (y_pred == 0) & (y_true == 1),
    }
    if kind not in table:
        raise ValueError(f"unknown indicator {kind!r}; choose from {sorted(table)}")
    return table[kind].astype(float)


def estimate_moments(y_true, y_pred, s, loss_kind="misclassification",
                     fairness_indicator="positive_prediction") -> MomentSet:
    """Plug-in group moments (population convention, divide by ``m_s``).

    ``loss_kind`` and ``fairness_indicator`` name a 0/1 indicator or give the
    per-row values directly.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    s = np.asarray(s)
    if not len(y_true) == len(y_pred) == len(s):
        raise ValueError("inputs must have equal length")
    loss = _indicator(loss_kind, y_true, y_pred)
    mu = _indicator(fairness_indicator, y_true, y_pred)
    out = {k: [] for k in ("pi", "loss_mean", "loss_var", "fair_mean", "fair_var", "cov")}
    for g in (0, 1):
        rows = s == g
        if not rows.any():
            raise ValueError(f"protected group {g} is empty")
        lg, mg = loss[rows], mu[rows]
        out["pi"].append(rows.mean())
        out["loss_mean"].append(lg.mean())
        out["loss_var"].append(lg.var())
        out["fair_mean"].append(mg.mean())
        out["fair_var"].append(mg.var())
        out["cov"].append(((lg - lg.mean()) * (mg - mg.mean())).mean())
    pi = out["pi"]
    out["pi"] = [pi[0], 1.0 - pi[0]]  # exact complement keeps the sum-to-one check tight
    return MomentSet(**out)


def limiting_variance(moments: MomentSet, lam: float, penalty: FairPenalty = FairPenalty()) -> float:
    """Asymptotic variance of ``sqrt(m) (L_D - L_P)``.

    The between-group term is counted once for the single unordered pair of
    groups, so ``lam = 1`` gives exactly the total variance of the loss.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    p0, p1 = moments.pi
    if p0 <= 0 or p1 <= 0:
        raise ValueError("group base rates must be positive")
    k = penalty.gradient(*moments.fair_mean)
    intra = p0 * moments.loss_var[0] + p1 * moments.loss_var[1]
    between = p0 * p1 * (moments.loss_mean[0] - moments.loss_mean[1]) ** 2
    fair = sum(k[s] ** 2 * moments.fair_var[s] / moments.pi[s] for s in (0, 1))
    cross = sum(k[s] * moments.cov[s] for s in (0, 1))
    return lam ** 2 * (intra + between) + (1 - lam) ** 2 * fair + 2 * lam * (1 - lam) * cross


@dataclass(frozen=True)
class BernoulliWorld:
    """Analytic population: ``pi1 = Pr(S=1)`` and, per group, the probabilities
    of the four (l, mu) cells ordered (0,0), (0,1), (1,0), (1,1)."""

    pi1: float
    cells0: tuple
    cells1: tuple
    name: str = ""

    def __post_init__(self):
        if not 0.0 < self.pi1 < 1.0:
            raise ValueError("pi1 must lie in (0, 1)")
        for name in ("cells0", "cells1"):
            c = tuple(float(x) for x in getattr(self, name))
            if len(c) != 4 or min(c) < 0 or abs(sum(c) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be four probabilities summing to 1")
            object.__setattr__(self, name, c)

    @classmethod
    def from_margins(cls, pi1, loss, fair, joint=None, name="") -> "BernoulliWorld":
        """Groups given by Pr(l=1), Pr(mu=1) and optionally Pr(l=1, mu=1) (default: independent)."""
        cells = []
        for s in (0, 1):
            a, b = loss[s], fair[s]
            j = a * b if joint is None else joint[s]
            cells.append((1 - a - b + j, b - j, a - j, j))
        return cls(pi1, cells[0], cells[1], name)

    def group_cells(self, s: int) -> np.ndarray:
        return np.array(self.cells1 if s else self.cells0)

    def moments(self) -> MomentSet:
        out = {k: [] for k in ("loss_mean", "loss_var", "fair_mean", "fair_var", "cov")}
        for s in (0, 1):
            c00, c01, c10, c11 = self.group_cells(s)
            lm, fm = c10 + c11, c01 + c11
            out["loss_mean"].append(lm)
            out["loss_var"].append(lm * (1 - lm))
            out["fair_mean"].append(fm)
            out["fair_var"].append(fm * (1 - fm))
            out["cov"].append(c11 - lm * fm)
        return MomentSet(pi=(1 - self.pi1, self.pi1), **out)

    def population_risk(self, lam: float, penalty: FairPenalty) -> float:
        m = self.moments()
        loss = m.pi[0] * m.loss_mean[0] + m.pi[1] * m.loss_mean[1]
        return lam * loss + (1 - lam) * float(penalty.value(*m.fair_mean))

    def to_dict(self) -> dict:
        return {"name": self.name, "pi1": self.pi1, "cells0": list(self.cells0), "cells1": list(self.cells1)}


def standard_worlds() -> dict:
    """The three analytic worlds of the validation suite.

    ``identical`` gives both groups the same loss law; their fairness means
    differ so the absolute-difference penalty stays differentiable.
    """
    return {
        "distinct": BernoulliWorld.from_margins(0.5, (0.2, 0.4), (0.6, 0.3), (0.15, 0.1), name="distinct"),
        "identical": BernoulliWorld.from_margins(0.5, (0.3, 0.3), (0.6, 0.4), (0.2, 0.1), name="identical"),
        "imbalanced": BernoulliWorld.from_margins(0.1, (0.2, 0.4), (0.5, 0.42), (0.12, 0.2), name="imbalanced"),
    }


def sample_risks(world: BernoulliWorld, m: int, reps: int, lam: float, penalty: FairPenalty,
                 rng: np.random.Generator) -> np.ndarray:
    """Sample empirical risks of ``reps`` independent data sets of size ``m``.

    Uses sufficient statistics: the group-1 size is binomial and the (l, mu)
    cell counts multinomial. Draws in which a group is empty are redrawn.
    """
    m1 = rng.binomial(m, world.pi1, size=reps)
    bad = (m1 == 0) | (m1 == m)
    while bad.any():
        m1[bad] = rng.binomial(m, world.pi1, size=int(bad.sum()))
        bad = (m1 == 0) | (m1 == m)
    m0 = m - m1
    n0 = rng.multinomial(m0, world.group_cells(0))
    n1 = rng.multinomial(m1, world.group_cells(1))
    loss = (n0[:, 2] + n0[:, 3] + n1[:, 2] + n1[:, 3]) / m
    f0 = (n0[:, 1] + n0[:, 3]) / m0
    f1 = (n1[:, 1] + n1[:, 3]) / m1
    return lam * loss + (1 - lam) * penalty.value(f0, f1)


@dataclass(frozen=True)
class CLTReport:
    world: str
    m: int
    reps: int
    lam: float
    penalty: str
    seed: int
    empirical_variance: float
    predicted_variance: float
    ratio: float
    mean_deviation: float
    at_kink: bool
    deviations: np.ndarray = field(repr=False, compare=False, default=None)

    FIELDS = ("world", "m", "reps", "lam", "penalty", "seed", "empirical_variance", "predicted_variance",
              "ratio", "mean_deviation", "at_kink")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def deviations_csv(self) -> str:
        """Long format: one row per replication."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["world", "m", "lam", "rep", "scaled_deviation"])
        for i, v in enumerate(self.deviations):
            w.writerow([self.world, self.m, format_number(self.lam), i, format_number(v)])
        return buf.getvalue()


def clt_experiment(world: BernoulliWorld, m: int, reps: int, lam: float, penalty: FairPenalty = FairPenalty(),
                   seed: int = 0) -> CLTReport:
    """Variance of ``sqrt(m) (L_D - L_P)`` over ``reps`` samples versus the
    limiting variance."""
    if m < 2 or reps < 2:
        raise ValueError("need m >= 2 and reps >= 2")
    rng = np.random.default_rng(seed)
    risks = sample_risks(world, m, reps, lam, penalty, rng)
    dev = math.sqrt(m) * (risks - world.population_risk(lam, penalty))
    emp = float(dev.var(ddof=1))
    mom = world.moments()
    pred = limiting_variance(mom, lam, penalty)
    ratio = emp / pred if pred > 0 else math.inf
    return CLTReport(world.name, m, reps, lam, penalty.kind, seed, emp, pred, ratio, float(dev.mean()),
                     penalty.at_kink(*mom.fair_mean), dev)


# naive randomised debiaser ---------------------------------------------------

@dataclass(frozen=True)
class NaiveDebiasConfig:
    alpha: float
    beta: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.beta)
        if len(b) != 2 or not all(0.0 < x < 1.0 for x in b):
            raise ValueError("beta needs two base rates in (0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class BVNReport:
    alpha: float
    beta: tuple
    main_prediction: tuple
    optimal_prediction: tuple
    bias: tuple
    variance: tuple
    noise: tuple
    # Monte Carlo standard errors (closed form: zeros)
    se: dict = field(default_factory=dict)
    variance_difference_factorized: float | None = None
    regime: str = ""
    source: str = "closed_form"

    @property
    def noise_difference(self) -> float:
        return self.noise[0] - self.noise[1]

    @property
    def bias_difference(self) -> float:
        return self.bias[0] - self.bias[1]

    @property
    def variance_difference(self) -> float:
        return self.variance[0] - self.variance[1]

    @property
    def gamma(self) -> float:
        return abs(self.noise_difference + self.bias_difference + self.variance_difference)

    def to_dict(self) -> dict:
        d = {"source": self.source, "alpha": self.alpha, "beta0": self.beta[0], "beta1": self.beta[1]}
        for name in ("main_prediction", "optimal_prediction", "bias", "variance", "noise"):
            for a in (0, 1):
                d[f"{name}{a}"] = getattr(self, name)[a]
        d.update(noise_difference=self.noise_difference, bias_difference=self.bias_difference,
                 variance_difference=self.variance_difference, gamma=self.gamma,
                 variance_difference_factorized=self.variance_difference_factorized, regime=self.regime)
        for k, v in sorted(self.se.items()):
            d[f"se_{k}"] = v
        return d


def naive_variance_factorized(alpha: float, beta0: float, beta1: float) -> float | None:
    """The published factorised form of V_0 - V_1; ``None`` at ``beta0 + beta1 = 1/2``."""
    c = beta0 + beta1
    if abs(2 * c - 1) < 1e-15:
        return None
    return 0.5 * (beta0 - beta1) * (0.5 - c) * (alpha - 2) * (alpha - 4 * (c - 1) / (2 * c - 1))


def naive_regime(beta0: float, beta1: float) -> str:
    """Shape of the factorised V_0 - V_1 in alpha on [0, 1]."""
    c = beta0 + beta1
    if 0.75 < c < 1.0 and beta0 != beta1:
        return "interior_extremum"
    f = naive_variance_factorized
    v0, v1 = f(0.0, beta0, beta1), f(1.0, beta0, beta1)
    if v0 is None:
        v0, v1 = _naive_v(0.0, beta0) - _naive_v(0.0, beta1), _naive_v(1.0, beta0) - _naive_v(1.0, beta1)
    if v1 > v0:
        return "increasing"
    if v1 < v0:
        return "decreasing"
    return "constant"


def naive_extremum_alpha(beta0: float, beta1: float) -> float | None:
    c = beta0 + beta1
    return 2 - 1 / (2 * c - 1) if 0.75 < c < 1.0 else None


def _naive_v(alpha, b):
    h = 1 - alpha / 2
    return h * (h * (b - b * b) + b)


def naive_policy_closed_form(cfg: NaiveDebiasConfig) -> BVNReport:
    """Published per-group formulas for the naive debiaser."""
    a = cfg.alpha
    b = cfg.beta
    return BVNReport(
        alpha=a, beta=b,
        main_prediction=tuple(x * (1 - a / 2) for x in b),
        optimal_prediction=b,
        bias=tuple(a * x / 2 for x in b),
        variance=tuple(_naive_v(a, x) for x in b),
        noise=tuple(2 * x * (1 - x) for x in b),
        variance_difference_factorized=naive_variance_factorized(a, *b),
        regime=naive_regime(*b),
    )


def simulate_naive_policy(alpha: float, beta: float, n: int, rng: np.random.Generator):
    """Labels, base predictions and debiased outputs for one group.

    Labels and base predictions are independent Bernoulli(beta) draws. The
    output keeps the base prediction w.p. 1-alpha, is 1 w.p. alpha*beta/2 and
    0 otherwise (the listed cases leave alpha/2 of the mass unassigned; it goes
    to 0, which reproduces the published main prediction).
    Returns ``(y, base, out, flipped)``.
    """
    y = (rng.random(n) < beta).astype(np.int8)
    base = (rng.random(n) < beta).astype(np.int8)
    u = rng.random(n)
    keep = u < 1 - alpha
    one = (~keep) & (u < 1 - alpha + alpha * beta / 2)
    out = np.where(keep, base, np.where(one, 1, 0)).astype(np.int8)
    return y, base, out, out != base


def _l1_decomposition(y, out):
    """(main prediction, optimal prediction, bias, variance, noise) under absolute loss
    with mean-type main and optimal predictions."""
    y_star = y.mean()
    y_tilde = out.mean()
    return (y_tilde, y_star, abs(y_star - y_tilde), np.abs(out - y_tilde).mean(), np.abs(y - y_star).mean())


def naive_policy_monte_carlo(cfg: NaiveDebiasConfig, n_draws: int = 10 ** 6, seed: int = 0,
                             batches: int = 100) -> BVNReport:
    """Empirical decomposition with batch-means standard errors."""
    if n_draws < 10 ** 4:
        raise ValueError("n_draws must be at least 1e4")
    rng = np.random.default_rng(seed)
    names = ("main_prediction", "optimal_prediction", "bias", "variance", "noise")
    vals = {k: [] for k in names}
    se = {}
    for a, beta in enumerate(cfg.beta):
        y, _, out, _ = simulate_naive_policy(cfg.alpha, beta, n_draws, rng)
        full = _l1_decomposition(y, out)
        per_batch = np.array([_l1_decomposition(yb, ob) for yb, ob in
                              zip(np.array_split(y, batches), np.array_split(out, batches))])
        sd = per_batch.std(axis=0, ddof=1) / math.sqrt(batches)
        for k, v, e in zip(names, full, sd):
            vals[k].append(float(v))
            se[f"{k}{a}"] = float(e)
    return BVNReport(cfg.alpha, cfg.beta, *(tuple(vals[k]) for k in names), se=se,
                     variance_difference_factorized=naive_variance_factorized(cfg.alpha, *cfg.beta),
                     regime=naive_regime(*cfg.beta), source="monte_carlo")


def bvn_csv(reports) -> str:
    """Long format: one row per report (alpha grid point)."""
    rows = [r.to_dict() for r in reports]
    cols = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([format_number(r.get(c)) if not isinstance(r.get(c), str) else r[c] for c in cols])
    return buf.getvalue()
