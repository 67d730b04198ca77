"""Fairness-confusion tensors and the group fairness metrics defined on them.

A fairness-confusion tensor (FACT) holds the confusion counts of a binary
classifier separately for the two protected groups. Every group fairness
definition used here is an equality ``h(group0) == h(group1)`` of a rate
function ``h`` over one group's confusion block; ``tau`` and ``gap`` measure
how far a FACT is from satisfying it.

Undefined rates (zero denominators) are represented by ``nan``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Fairness(str, Enum):
    DP = "DP"
    PP = "PP"
    EFOR = "EFOR"
    EFNR = "EFNR"
    PE = "PE"
    EOp = "EOp"
    EOd = "EOd"

    @classmethod
    def parse(cls, value) -> "Fairness":
        if isinstance(value, cls):
            return value
        key = str(value).strip()
        aliases = {"EFPR": "PE", "PE_EFPR": "PE", "FPR": "PE", "FNR": "EFNR", "FOR": "EFOR",
                   "PPR": "DP", "TPR": "EOp", "EQODDS": "EOd", "EOD": "EOd", "EOP": "EOp"}
        key = aliases.get(key.upper(), key)
        for member in cls:
            if member.value.upper() == key.upper():
                return member
        raise ValueError(f"unknown fairness definition {value!r}")

    @property
    def components(self) -> tuple["Fairness", ...]:
        """Simple definitions this one is the conjunction of."""
        if self is Fairness.EOd:
            return (Fairness.EOp, Fairness.PE)
        return (self,)


SIMPLE_DEFINITIONS = tuple(f for f in Fairness if f is not Fairness.EOd)


@dataclass(frozen=True)
class GroupConfusion:
    """Confusion block of one protected group (counts or probabilities)."""

    tp: float = 0.0
    fn: float = 0.0
    fp: float = 0.0
    tn: float = 0.0

    def __post_init__(self):
        for name in ("tp", "fn", "fp", "tn"):
            v = float(getattr(self, name))
            if not v >= 0.0:
                raise ValueError(f"confusion entry {name}={v} must be non-negative")
            object.__setattr__(self, name, v)

    def total(self) -> float:
        return self.tp + self.fn + self.fp + self.tn

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tp, self.fn, self.fp, self.tn)

    def scaled(self, c: float) -> "GroupConfusion":
        return GroupConfusion(self.tp * c, self.fn * c, self.fp * c, self.tn * c)


@dataclass(frozen=True)
class FairnessConfusionTensor:
    group0: GroupConfusion
    group1: GroupConfusion
    normalized: bool = False

    def __post_init__(self):
        if self.normalized and abs(self.total() - 1.0) > 1e-12:
            raise ValueError(f"normalized FACT must sum to 1, got {self.total()!r}")

    def total(self) -> float:
        return self.group0.total() + self.group1.total()

    def group(self, s: int) -> GroupConfusion:
        return self.group1 if s else self.group0

    def normalize(self) -> "FairnessConfusionTensor":
        total = self.total()
        if total <= 0:
            raise ValueError("cannot normalize an empty FACT")
        return FairnessConfusionTensor(self.group0.scaled(1.0 / total), self.group1.scaled(1.0 / total),
                                       normalized=True)

    def to_array(self) -> np.ndarray:
        """Entries ordered (TP0, FN0, FP0, TN0, TP1, FN1, FP1, TN1)."""
        return np.array(self.group0.as_tuple() + self.group1.as_tuple())

    @classmethod
    def from_array(cls, z, normalized: bool = False) -> "FairnessConfusionTensor":
        z = np.asarray(z, dtype=float)
        if z.shape != (8,):
            raise ValueError("FACT array must have 8 entries")
        return cls(GroupConfusion(*z[:4]), GroupConfusion(*z[4:]), normalized=normalized)

    def swapped(self) -> "FairnessConfusionTensor":
        return FairnessConfusionTensor(self.group1, self.group0, self.normalized)


FACT = FairnessConfusionTensor


def fact_from_predictions(y_true, y_pred, s, weights=None, normalize: bool = False) -> FairnessConfusionTensor:
    """Tally (weighted) confusion counts per protected group."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    s = np.asarray(s)
    n = len(y_true)
    if len(y_pred) != n or len(s) != n:
        raise ValueError(f"length mismatch: y_true={n}, y_pred={len(y_pred)}, s={len(s)}")
    if n == 0:
        raise ValueError("empty input")
    if weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=float)
        if len(weights) != n:
            raise ValueError(f"length mismatch: weights={len(weights)}, expected {n}")
        if np.any(weights < 0) or not np.any(weights > 0):
            raise ValueError("weights must be non-negative and not all zero")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred), ("s", s)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary 0/1")

    yt = y_true.astype(bool)
    yp = y_pred.astype(bool)
    groups = []
    for g in (0, 1):
        in_g = s == g
        if not in_g.any():
            raise ValueError(f"protected group {g} absent from input")
        wg = weights * in_g
        groups.append(GroupConfusion(
            tp=float(np.sum(wg[yp & yt])),
            fn=float(np.sum(wg[~yp & yt])),
            fp=float(np.sum(wg[yp & ~yt])),
            tn=float(np.sum(wg[~yp & ~yt])),
        ))
    fact = FairnessConfusionTensor(groups[0], groups[1])
    return fact.normalize() if normalize else fact


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def rate_from_cells(definition, tp, fn, fp, tn):
    """Vectorised rate function ``h``; nan where the denominator vanishes."""
    definition = Fairness.parse(definition)
    if definition is Fairness.DP:
        return _ratio(np.add(tp, fp), np.add(np.add(tp, fp), np.add(fn, tn)))
    if definition is Fairness.PP:
        return _ratio(tp, np.add(tp, fp))
    if definition is Fairness.EFOR:
        return _ratio(fn, np.add(fn, tn))
    if definition is Fairness.EFNR:
        return _ratio(fn, np.add(tp, fn))
    if definition is Fairness.PE:
        return _ratio(fp, np.add(fp, tn))
    if definition is Fairness.EOp:
        return _ratio(tp, np.add(tp, fn))
    raise ValueError("EOd is composite (EOp and PE) and has no single rate function")


def rate(definition, g: GroupConfusion) -> float:
    """Rate ``h`` of one group's confusion block; ``nan`` if undefined."""
    return float(rate_from_cells(definition, *g.as_tuple()))


def tau_from_rates(h0, h1):
    """Symmetrized ratio of two rates.

    Both zero gives 1; exactly one zero or undefined gives 0; both undefined
    stays undefined (nan).
    """
    h0 = np.asarray(h0, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    nan0, nan1 = np.isnan(h0), np.isnan(h1)
    lo = np.fmin(h0, h1)
    hi = np.fmax(h0, h1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 1.0)
    out = np.where(nan0 ^ nan1, 0.0, out)
    return np.where(nan0 & nan1, np.nan, out)


def _simple_rates(definition, fact):
    return (rate(definition, fact.group0), rate(definition, fact.group1))


def tau(definition, fact: FairnessConfusionTensor) -> float:
    definition = Fairness.parse(definition)
    if definition is Fairness.EOd:
        parts = [tau(c, fact) for c in definition.components]
        return float("nan") if any(math.isnan(p) for p in parts) else min(parts)
    h0, h1 = _simple_rates(definition, fact)
    return float(tau_from_rates(h0, h1))


def gap(definition, fact: FairnessConfusionTensor) -> float:
    definition = Fairness.parse(definition)
    if definition is Fairness.EOd:
        parts = [gap(c, fact) for c in definition.components]
        return float("nan") if any(math.isnan(p) for p in parts) else max(parts)
    h0, h1 = _simple_rates(definition, fact)
    return abs(h1 - h0)


def accuracy(fact: FairnessConfusionTensor) -> float:
    total = fact.total()
    if total <= 0:
        raise ValueError("accuracy of an empty FACT")
    return (fact.group0.tp + fact.group0.tn + fact.group1.tp + fact.group1.tn) / total


@dataclass(frozen=True)
class MetricReport:
    definition: Fairness
    accuracy: float
    tau: float
    gap: float
    rate0: float
    rate1: float

    FIELDS = ("definition", "accuracy", "tau", "gap", "rate0", "rate1")

    def to_dict(self) -> dict:
        return {
            "definition": self.definition.value,
            "accuracy": self.accuracy,
            "tau": self.tau,
            "gap": self.gap,
            "rate0": self.rate0,
            "rate1": self.rate1,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.FIELDS)
        d = self.to_dict()
        writer.writerow([d["definition"]] + [format_number(d[k]) for k in self.FIELDS[1:]])
        return buf.getvalue()


def metric_report(definition, fact: FairnessConfusionTensor) -> MetricReport:
    definition = Fairness.parse(definition)
    if definition is Fairness.EOd:
        # per-group rates reported for the component with the larger gap
        comps = definition.components
        worst = max(comps, key=lambda c: -math.inf if math.isnan(gap(c, fact)) else gap(c, fact))
        h0, h1 = _simple_rates(worst, fact)
    else:
        h0, h1 = _simple_rates(definition, fact)
    return MetricReport(definition, accuracy(fact), tau(definition, fact), gap(definition, fact), h0, h1)


def format_number(x) -> str:
    """Shortest round-trip decimal; ``nan`` for undefined values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)
