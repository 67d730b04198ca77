"""Brute-force reference implementations used by the unit and acceptance tests.

Each oracle is written independently of the package code paths it checks.
"""
import itertools
import math

import numpy as np

GRID = np.round(np.linspace(0.0, 1.0, 101), 12)


def random_joint(rng, scale=300):
    """Calibration counts [yhat, y, s] from a noisy classifier with group-specific rates."""
    c = np.zeros((2, 2, 2))
    for s in (0, 1):
        npos, nneg = rng.integers(20, scale, 2)
        tpr, fpr = rng.uniform(0.5, 0.95), rng.uniform(0.05, 0.5)
        c[1, 1, s], c[0, 1, s] = tpr * npos, (1 - tpr) * npos
        c[1, 0, s], c[0, 0, s] = fpr * nneg, (1 - fpr) * nneg
    return c


def group_cells(counts, s, q0, q1):
    """(tp, fn, fp, tn) for group s when yhat=0 maps to 1 w.p. q0 and yhat=1 w.p. q1."""
    n = counts / counts.sum()
    pos0, pos1 = n[0, 1, s], n[1, 1, s]
    neg0, neg1 = n[0, 0, s], n[1, 0, s]
    tp = q0 * pos0 + q1 * pos1
    fp = q0 * neg0 + q1 * neg1
    return tp, (pos0 + pos1) - tp, fp, (neg0 + neg1) - fp


def eod_grid_oracle(counts):
    """Min disagreement over EOd-feasible policies: one group's (q0, q1) on the 0.01
    grid, the other group's policy completed exactly by solving the 2x2 parity system."""
    n = counts / counts.sum()
    best = math.inf
    q0, q1 = np.meshgrid(GRID, GRID, indexing="ij")
    q0, q1 = q0.ravel(), q1.ravel()
    for g in (0, 1):
        o = 1 - g
        tg = n[1, 1, g] / n[:, 1, g].sum()
        fg = n[1, 0, g] / n[:, 0, g].sum()
        to = n[1, 1, o] / n[:, 1, o].sum()
        fo = n[1, 0, o] / n[:, 0, o].sum()
        t = q1 * tg + q0 * (1 - tg)
        f = q1 * fg + q0 * (1 - fg)
        # solve p1*to + p0*(1-to) = t, p1*fo + p0*(1-fo) = f
        det = (1 - to) * fo - (1 - fo) * to
        if abs(det) < 1e-12:
            continue
        p0 = (t * fo - f * to) / det
        p1 = ((1 - to) * f - (1 - fo) * t) / det
        ok = (p0 >= -1e-12) & (p0 <= 1 + 1e-12) & (p1 >= -1e-12) & (p1 <= 1 + 1e-12)
        err_g = n[0, 1, g] * (1 - q0) + n[1, 1, g] * (1 - q1) + n[0, 0, g] * q0 + n[1, 0, g] * q1
        err_o = n[0, 1, o] * (1 - p0) + n[1, 1, o] * (1 - p1) + n[0, 0, o] * p0 + n[1, 0, o] * p1
        if ok.any():
            best = min(best, float((err_g + err_o)[ok].min()))
    return best


def oracle_rate(definition, tp, fn, fp, tn):
    num, den = {
        "DP": (tp + fp, tp + fn + fp + tn),
        "PP": (tp, tp + fp),
        "EFOR": (fn, fn + tn),
        "EFNR": (fn, tp + fn),
        "PE": (fp, fp + tn),
        "EOp": (tp, tp + fn),
    }[definition]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)


def oracle_term(definition, loss, h0, h1):
    """Pairwise loss matrix for rates h0 (rows) and h1 (columns)."""
    a, b = h0[:, None], h1[None, :]
    if loss == "gap":
        v = np.abs(a - b)
    else:
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(hi > 0, lo / np.where(hi > 0, hi, 1), 1.0)
        t = np.where(np.isnan(a) != np.isnan(b), 0.0, t)
        t = np.where(np.isnan(a) & np.isnan(b), np.nan, t)
        v = 1 - t
    return np.where(np.isnan(v), 1.0, v)


def pfop_grid_oracle(counts, perf_weight, terms, chunk=400):
    """Min of the PFOP objective over all policies on the 0.01 grid (101^4 points).

    ``terms`` is a list of (definition, loss, weight). Returns (value, min over
    the grid of 1 - tau for the first term's policy-free best, argmin index).
    """
    q0, q1 = np.meshgrid(GRID, GRID, indexing="ij")
    q0, q1 = q0.ravel(), q1.ravel()
    cells = [np.array(group_cells(counts, s, q0, q1)) for s in (0, 1)]
    acc = [c[0] + c[3] for c in cells]
    rates = {}
    for d, _, _ in terms:
        for comp in (("EOp", "PE") if d == "EOd" else (d,)):
            rates[comp] = [oracle_rate(comp, *c) for c in cells]
    best = math.inf
    m = len(q0)
    for start in range(0, m, chunk):
        sl = slice(start, start + chunk)
        val = perf_weight * (1 - (acc[0][sl, None] + acc[1][None, :]))
        for d, loss, w in terms:
            comps = ("EOp", "PE") if d == "EOd" else (d,)
            v = None
            for comp in comps:
                t = oracle_term(comp, loss, rates[comp][0][sl], rates[comp][1])
                v = t if v is None else np.maximum(v, t)
            val = val + w * v
        best = min(best, float(val.min()))
    return best


def simplex_lattice(k, dim=8):
    """All points of the simplex with coordinates in multiples of 1/k."""
    pts = []
    for bars in itertools.combinations(range(k + dim - 1), dim - 1):
        prev, row = -1, []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(k + dim - 2 - prev)
        pts.append(row)
    return np.array(pts, dtype=float) / k


def fact_objective_oracle(z, perf_weight, terms):
    """PFOP objective for FACT rows z (n, 8), straight-line."""
    z = np.asarray(z, dtype=float)
    total = z.sum(axis=1)
    val = perf_weight * (1 - (z[:, 0] + z[:, 3] + z[:, 4] + z[:, 7]) / total)
    for d, loss, w in terms:
        v = None
        for comp in (("EOp", "PE") if d == "EOd" else (d,)):
            h0 = oracle_rate(comp, *z[:, :4].T)
            h1 = oracle_rate(comp, *z[:, 4:].T)
            if loss == "gap":
                t = np.abs(h0 - h1)
            else:
                lo, hi = np.minimum(h0, h1), np.maximum(h0, h1)
                with np.errstate(invalid="ignore", divide="ignore"):
                    t = 1 - np.where(hi > 0, lo / np.where(hi > 0, hi, 1), 1.0)
                t = np.where(np.isnan(h0) != np.isnan(h1), 1.0, t)
                t = np.where(np.isnan(h0) & np.isnan(h1), 1.0, t)
            t = np.where(np.isnan(t), 1.0, t)
            v = t if v is None else np.maximum(v, t)
        val = val + w * v
    return val


def influence_variance(pi1, cells0, cells1, lam, grad):
    """Exact variance of the first-order influence function of the penalised risk.

    Enumerates the eight (s, l, mu) outcomes of a Bernoulli world; ``grad`` is
    the penalty gradient (k0, k1) at the group fairness means.
    """
    pis = (1 - pi1, pi1)
    cells = (np.asarray(cells0, float), np.asarray(cells1, float))
    L = sum(pis[s] * (cells[s][2] + cells[s][3]) for s in (0, 1))
    M = [cells[s][1] + cells[s][3] for s in (0, 1)]
    mean = 0.0
    second = 0.0
    for s in (0, 1):
        for idx, (l, mu) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            p = pis[s] * cells[s][idx]
            f = lam * (l - L) + (1 - lam) * grad[s] * (mu - M[s]) / pis[s]
            mean += p * f
            second += p * f * f
    return second - mean ** 2


def moments_loop(y_true, y_pred, s):
    """Two-pass per-group moments of the misclassification and positive-prediction indicators."""
    out = []
    n = len(s)
    for g in (0, 1):
        ls, ms = [], []
        for i in range(n):
            if s[i] == g:
                ls.append(1.0 if y_pred[i] != y_true[i] else 0.0)
                ms.append(1.0 if y_pred[i] == 1 else 0.0)
        k = len(ls)
        lm = sum(ls) / k
        mm = sum(ms) / k
        lv = sum((a - lm) ** 2 for a in ls) / k
        mv = sum((b - mm) ** 2 for b in ms) / k
        cv = sum((a - lm) * (b - mm) for a, b in zip(ls, ms)) / k
        out.append((k / n, lm, lv, mm, mv, cv))
    return out
