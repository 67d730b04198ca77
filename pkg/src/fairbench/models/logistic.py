"""Weighted L2-regularised logistic regression fitted by gradient descent."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LogisticConfig:
    l2: float = 1e-4
    max_iter: int = 2000
    tol: float = 1e-6
    step_size: float = 1.0
    threshold: float = 0.5
    seed: int = 0  # unused by the deterministic solver; kept for a uniform model config

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    threshold: float
    l2: float
    # standardisation applied before the linear map; coefficients act on raw features
    center: np.ndarray = None
    scale: np.ndarray = None
    n_iter: int = 0
    converged: bool = False
    loss_history: tuple = field(default=(), repr=False)

    @property
    def d(self) -> int:
        return len(self.coefficients)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} features, got shape {X.shape}")
        return X @ self.coefficients + self.intercept

    def predict_scores(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        # ties at the threshold go to class 1
        return (self.predict_scores(X) >= self.threshold).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "kind": "logistic",
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "threshold": self.threshold,
            "l2": self.l2,
            "n_iter": self.n_iter,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(np.asarray(d["coefficients"], dtype=float), float(d["intercept"]),
                   float(d["threshold"]), float(d["l2"]), n_iter=int(d.get("n_iter", 0)),
                   converged=bool(d.get("converged", False)))


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_objective(theta, Xs, y, v, l2):
    """Weighted mean negative log-likelihood plus ``l2/2 * |coef|^2``.

    ``theta = (coef..., intercept)``; ``v`` are weights normalised to sum 1.
    Returns ``(value, gradient)``.
    """
    coef, b = theta[:-1], theta[-1]
    z = Xs @ coef + b
    # log(1 + e^z) - y z, computed stably
    nll = np.logaddexp(0.0, z) - y * z
    value = float(v @ nll) + 0.5 * l2 * float(coef @ coef)
    r = v * (_sigmoid(z) - y)
    grad = np.empty_like(theta)
    grad[:-1] = Xs.T @ r + l2 * coef
    grad[-1] = r.sum()
    return value, grad


def fit_logistic(data, cfg: LogisticConfig = LogisticConfig()) -> LogisticModel:
    X, y, w = data.X, data.y.astype(float), data.weights
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    v = w / w.sum()
    center = v @ X
    scale = np.sqrt(v @ (X - center) ** 2)
    scale[scale == 0] = 1.0
    Xs = (X - center) / scale

    theta = np.zeros(X.shape[1] + 1)
    value, grad = logistic_objective(theta, Xs, y, v, cfg.l2)
    history = [value]
    step = cfg.step_size
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gnorm2 = float(grad @ grad)
        if np.max(np.abs(grad)) < cfg.tol:
            converged = True
            it -= 1
            break
        # Armijo backtracking; the accepted value never exceeds the previous one
        while True:
            cand = theta - step * grad
            cval, cgrad = logistic_objective(cand, Xs, y, v, cfg.l2)
            if cval <= value - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if cval > value:
            break
        theta, value, grad = cand, cval, cgrad
        history.append(value)
        step = min(step * 2.0, 64.0 * cfg.step_size)
    else:
        converged = bool(np.max(np.abs(grad)) < cfg.tol)

    coef = theta[:-1] / scale
    intercept = float(theta[-1] - coef @ center)
    return LogisticModel(coef, intercept, cfg.threshold, cfg.l2, center, scale, it, converged, tuple(history))
