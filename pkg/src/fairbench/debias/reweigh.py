"""Generalised and partial reweighing (pre-processing)."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..datasets import DegenerateDataError
from ..fact import Fairness


class UnsupportedSchemeError(ValueError):
    pass


# conditioning label for the conditional-independence schemes
_CONDITION = {Fairness.EOp: 1, Fairness.PE: 0}


def check_strength(strength) -> float:
    lam = float(strength)
    if not 0.0 <= lam <= 1.0 or lam != lam:
        raise ValueError(f"debiasing strength must lie in [0, 1], got {strength!r}")
    return lam


def _scheme(definition) -> Fairness:
    definition = Fairness.parse(definition)
    if definition is Fairness.EOd:
        raise UnsupportedSchemeError(
            "there is no such reweighing scheme for equalized odds: the EOp and PE "
            "constraints each demand their own, generally different, weights")
    if definition not in (Fairness.DP, Fairness.EOp, Fairness.PE):
        raise UnsupportedSchemeError(f"no reweighing scheme for {definition.value}; use DP, EOp or PE")
    return definition


@dataclass(frozen=True)
class ReweighPlan:
    """Full (strength 1) weights per cell plus the interpolation strength.

    ``table`` maps ``(y, s, yhat)`` to a weight, where ``yhat`` is ``None``
    for label-based schemes. Cells outside the scheme's scope have weight 1.
    """

    definition: Fairness
    strength: float
    table: dict
    uses_predictions: bool = False

    def full_weight(self, y: int, s: int, yhat: int | None = None) -> float:
        key = (int(y), int(s), None if yhat is None else int(yhat))
        return self.table.get(key, 1.0)

    def weight(self, y: int, s: int, yhat: int | None = None) -> float:
        lam = self.strength
        return (1.0 - lam) + lam * self.full_weight(y, s, yhat)

    def row_weights(self, y, s, y_pred=None) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64)
        s = np.asarray(s, dtype=np.int64)
        full = np.ones(len(y))
        for (cy, cs, ch), w in self.table.items():
            mask = (y == cy) & (s == cs)
            if ch is not None:
                mask &= np.asarray(y_pred) == ch
            full[mask] = w
        return (1.0 - self.strength) + self.strength * full

    def to_dict(self) -> dict:
        return {
            "definition": self.definition.value,
            "strength": self.strength,
            "uses_predictions": self.uses_predictions,
            "cells": [{"y": y, "s": s, "yhat": h, "weight": w} for (y, s, h), w in sorted(
                self.table.items(), key=lambda kv: (kv[0][0], kv[0][1], -1 if kv[0][2] is None else kv[0][2]))],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ReweighPlan":
        table = {(int(c["y"]), int(c["s"]), None if c["yhat"] is None else int(c["yhat"])): float(c["weight"])
                 for c in d["cells"]}
        return cls(Fairness.parse(d["definition"]), check_strength(d["strength"]), table,
                   bool(d.get("uses_predictions", False)))


def _mass(w, mask) -> float:
    return float(w[mask].sum())


def _dp_table(y, s, w):
    total = w.sum()
    table = {}
    for cy in (0, 1):
        for cs in (0, 1):
            joint = _mass(w, (y == cy) & (s == cs)) / total
            if joint <= 0:
                raise DegenerateDataError(f"reweighing needs every (y, s) cell populated; (y={cy}, s={cs}) is empty")
            table[(cy, cs, None)] = (_mass(w, y == cy) / total) * (_mass(w, s == cs) / total) / joint
    return table


def _conditional_table(definition, y, s, w, y_pred):
    c = _CONDITION[definition]
    in_scope = y == c
    for cs in (0, 1):
        if _mass(w, in_scope & (s == cs)) <= 0:
            raise DegenerateDataError(f"{definition.value} reweighing needs rows with y={c} in group s={cs}")
    total = w.sum()
    table = {}
    if y_pred is None:
        # label form: Pr(Y=y_i) / Pr(Y=y_i | S=s_i, Y=c) on rows with y_i = c
        for cs in (0, 1):
            table[(c, cs, None)] = _mass(w, y == c) / total
        return table
    # prediction form: Pr(Yhat=yhat_i) / Pr(Yhat=yhat_i | S=s_i, Y=c) on rows with y_i = c
    for h in (0, 1):
        marginal = _mass(w, y_pred == h) / total
        for cs in (0, 1):
            group = in_scope & (s == cs)
            cond = _mass(w, group & (y_pred == h)) / _mass(w, group)
            if cond > 0:
                table[(c, cs, h)] = marginal / cond
    return table


def reweigh(data, definition, strength=1.0, y_pred=None):
    """Reweigh ``data`` towards the independence structure of ``definition``.

    DP uses training labels. EOp and PE act only on rows with ``y=1`` and
    ``y=0`` respectively. Passing ``y_pred`` (base-model predictions on the
    same rows) switches EOp/PE to the prediction-based form, which makes
    ``yhat`` independent of ``s`` within the conditioning class.
    Returns ``(reweighed dataset, plan)``; existing weights are multiplied.
    """
    scheme = _scheme(definition)
    lam = check_strength(strength)
    y, s, w = data.y, data.s, data.weights
    if y_pred is not None:
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if len(y_pred) != data.n:
            raise ValueError("y_pred length does not match the dataset")
    if scheme is Fairness.DP:
        table, uses = _dp_table(y, s, w), False
    else:
        table, uses = _conditional_table(scheme, y, s, w, y_pred), y_pred is not None
    plan = ReweighPlan(scheme, lam, table, uses)
    return data.with_weights(w * plan.row_weights(y, s, y_pred)), plan


def reweigh_exactness_check(data, definition=Fairness.DP, y_pred=None) -> float:
    """Max deviation of the weighted joint from the product of its marginals.

    DP checks ``(y, s)``; EOp/PE with ``y_pred`` check ``(yhat, s)`` within the
    conditioning class.
    """
    scheme = _scheme(definition)
    w = data.weights
    if scheme is Fairness.DP or y_pred is None:
        a, b, mask = data.y, data.s, np.ones(data.n, dtype=bool)
        if scheme is not Fairness.DP:
            mask = data.y == _CONDITION[scheme]
    else:
        a, b, mask = np.asarray(y_pred), data.s, data.y == _CONDITION[scheme]
    w = w * mask
    total = w.sum()
    resid = 0.0
    for i in (0, 1):
        for j in (0, 1):
            joint = _mass(w, (a == i) & (b == j)) / total
            prod = (_mass(w, a == i) / total) * (_mass(w, b == j) / total)
            resid = max(resid, abs(joint - prod))
    return resid
