"""Randomised flip policies acting on binary predictions."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..datasets import DegenerateDataError
from ..fact import FairnessConfusionTensor
from .reweigh import check_strength

IDENTITY = np.array([[0.0, 0.0], [1.0, 1.0]])  # indexed [yhat, s]


@dataclass(frozen=True, eq=False)
class CalibrationJoint:
    """Weighted counts of (yhat, y, s) on a calibration split, array ``[yhat, y, s]``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.shape != (2, 2, 2):
            raise ValueError("calibration counts must have shape (2, 2, 2)")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("calibration counts must be finite and non-negative")
        for g in (0, 1):
            if c[:, :, g].sum() <= 0:
                raise DegenerateDataError(f"protected group {g} absent from calibration data")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_predictions(cls, y_true, y_pred, s, weights=None) -> "CalibrationJoint":
        y_true, y_pred, s = (np.asarray(a, dtype=np.int64) for a in (y_true, y_pred, s))
        if not len(y_true) == len(y_pred) == len(s):
            raise ValueError("y_true, y_pred and s must have equal length")
        w = np.ones(len(s)) if weights is None else np.asarray(weights, dtype=float)
        c = np.zeros(8)
        np.add.at(c, y_pred * 4 + y_true * 2 + s, w)
        return cls(c.reshape(2, 2, 2))

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def group_rates(self, s: int) -> tuple:
        """Base classifier (TPR, FPR) in group ``s``; raises on degenerate groups."""
        c = self.counts[:, :, s]
        pos, neg = c[:, 1].sum(), c[:, 0].sum()
        if pos <= 0 or neg <= 0:
            kind = "positives" if pos <= 0 else "negatives"
            raise DegenerateDataError(f"group s={s} has no {kind} in the calibration data")
        return c[1, 1] / pos, c[1, 0] / neg

    def base_fact(self) -> FairnessConfusionTensor:
        return induced_fact(self, IDENTITY)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationJoint":
        return cls(np.asarray(d["counts"], dtype=float))


def induced_cells(counts, q) -> np.ndarray:
    """Expected FACT entries after flipping with ``q`` (shape ``(..., 2, 2)``).

    Returns ``(..., 8)`` ordered (TP0, FN0, FP0, TN0, TP1, FN1, FP1, TN1).
    """
    q = np.asarray(q, dtype=float)
    # ones[..., y, s] = expected count with yhat' = 1
    ones = np.einsum("hys,...hs->...ys", counts, q)
    tot = counts.sum(axis=0)
    zeros = tot - ones
    out = np.empty(q.shape[:-2] + (8,))
    for s in (0, 1):
        out[..., 4 * s + 0] = ones[..., 1, s]
        out[..., 4 * s + 1] = zeros[..., 1, s]
        out[..., 4 * s + 2] = ones[..., 0, s]
        out[..., 4 * s + 3] = zeros[..., 0, s]
    return out


def induced_fact(joint: CalibrationJoint, q) -> FairnessConfusionTensor:
    """Normalised FACT induced on ``joint`` by flip probabilities ``q[yhat, s]``."""
    z = induced_cells(joint.counts, q) / joint.total
    z = np.clip(z, 0.0, None)
    return FairnessConfusionTensor.from_array(z / z.sum(), normalized=True)


def interpolate(q_full, strength) -> np.ndarray:
    lam = check_strength(strength)
    return (1.0 - lam) * IDENTITY + lam * np.asarray(q_full, dtype=float)


@dataclass(frozen=True, eq=False)
class FlipPolicy:
    """``full[yhat, s]`` = Pr(debiased prediction is 1 | yhat, s) at strength 1.

    The applied probabilities ``p`` interpolate linearly towards the identity.
    """

    full: np.ndarray
    strength: float = 1.0
    method: str = ""

    def __post_init__(self):
        q = np.asarray(self.full, dtype=float)
        if q.shape != (2, 2):
            raise ValueError("flip policy must be a 2x2 table indexed [yhat, s]")
        if np.any(q < 0) or np.any(q > 1) or not np.all(np.isfinite(q)):
            raise ValueError("flip probabilities must lie in [0, 1]")
        object.__setattr__(self, "full", q)
        object.__setattr__(self, "strength", check_strength(self.strength))

    @classmethod
    def identity(cls) -> "FlipPolicy":
        return cls(IDENTITY.copy(), 1.0, "identity")

    @property
    def p(self) -> np.ndarray:
        return interpolate(self.full, self.strength)

    def with_strength(self, strength) -> "FlipPolicy":
        return FlipPolicy(self.full, strength, self.method)

    def to_dict(self) -> dict:
        return {"method": self.method, "strength": self.strength, "full": self.full.tolist(),
                "p": self.p.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "FlipPolicy":
        return cls(np.asarray(d["full"], dtype=float), float(d["strength"]), d.get("method", ""))


def apply_policy(policy: FlipPolicy, y_pred, s, rng=None) -> np.ndarray:
    """Redraw each prediction independently with Pr(1) = ``p[yhat_i, s_i]``.

    ``rng`` is a numpy Generator or a seed. Entries of 0 or 1 are honoured
    exactly whatever the draw.
    """
    y_pred = np.asarray(y_pred, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    if len(y_pred) != len(s):
        raise ValueError("y_pred and s must have equal length")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    prob = policy.p[y_pred, s]
    return (rng.random(len(y_pred)) < prob).astype(np.int64)
