"""Random forest of weighted CART trees.

Instance weights enter through the bootstrap: each tree draws
``round(sum(weights))`` rows with probability proportional to weight, and the
resulting multiplicities are the weights of the Gini criterion. Replicating a
row ``k`` times is therefore equivalent in distribution to giving it weight
``k``. With ``bootstrap=False`` the instance weights feed Gini directly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # default ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0
    backend: str | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass(frozen=True, eq=False)
class ForestModel:
    """Trees stored as flat node arrays; tree ``t`` spans ``offsets[t]:offsets[t+1]``.

    Internal nodes send ``x[feature] <= threshold`` left. ``value`` is the
    weighted fraction of positives in a node; a tree votes 1 when its leaf
    value is at least 0.5.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray
    d: int
    config: ForestConfig

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, t: int) -> tuple:
        a, b = self.offsets[t], self.offsets[t + 1]
        return (self.feature[a:b], self.threshold[a:b], self.left[a:b], self.right[a:b], self.value[a:b])

    def _check(self, X):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} features, got shape {X.shape}")
        return X

    def predict_scores(self, X, backend: str | None = None) -> np.ndarray:
        """Fraction of trees voting for class 1."""
        X = self._check(X)
        impl = _kernels.get_backend(backend or self.config.backend)
        return impl.forest_votes(X, self.feature, self.threshold, self.left, self.right,
                                 self.value, self.offsets)

    def predict(self, X) -> np.ndarray:
        # a tied vote goes to class 1
        return (self.predict_scores(X) >= 0.5).astype(np.int64)

    def tree_predictions(self, X) -> np.ndarray:
        """(n_trees, n) matrix of individual tree votes."""
        X = self._check(X)
        impl = _kernels.get_backend("python")
        out = np.empty((self.n_trees, X.shape[0]))
        for t in range(self.n_trees):
            f, th, l, r, v = self.tree(t)
            out[t] = impl.forest_votes(X, f, th, l, r, v, np.array([0, len(f)]))
        return out

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "kind": "forest",
            "d": self.d,
            "config": {"n_trees": cfg.n_trees, "max_depth": cfg.max_depth,
                       "min_samples_leaf": cfg.min_samples_leaf,
                       "features_per_split": cfg.features_per_split, "bootstrap": cfg.bootstrap,
                       "seed": cfg.seed},
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        arr = lambda k, t: np.asarray(d[k], dtype=t)
        return cls(arr("feature", np.int64), arr("threshold", np.float64), arr("left", np.int64),
                   arr("right", np.int64), arr("value", np.float64), arr("offsets", np.int64),
                   int(d["d"]), ForestConfig(**d["config"]))


def tree_seeds(seed: int, n_trees: int):
    """Per-tree (bootstrap generator, kernel seed) pairs derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n_trees)
    return [(np.random.default_rng(c), int(c.generate_state(1, np.uint64)[0])) for c in children]


def fit_forest(data, cfg: ForestConfig = ForestConfig()) -> ForestModel:
    X, y, w = data.X, data.y.astype(np.float64), data.weights
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    n, d = X.shape
    impl = _kernels.get_backend(cfg.backend)
    mtry = cfg.features_per_split or max(1, math.ceil(math.sqrt(d)))
    max_depth = -1 if cfg.max_depth is None else int(cfg.max_depth)

    positive = w > 0
    if np.all(y[positive] == y[positive][0]):
        warnings.warn("training data contains a single class; forest is a constant predictor",
                      RuntimeWarning, stacklevel=2)

    total = float(w.sum())
    n_draw = max(1, int(round(total)))
    prob = w / total
    parts = []
    for rng, kseed in tree_seeds(cfg.seed, cfg.n_trees):
        if cfg.bootstrap:
            counts = rng.multinomial(n_draw, prob).astype(np.float64)
        else:
            counts = w
        rows = np.flatnonzero(counts > 0)
        Xt = np.ascontiguousarray(X[rows])
        order = np.ascontiguousarray(np.argsort(Xt, axis=0, kind="stable").T, dtype=np.int64)
        parts.append(impl.build_tree(Xt, np.ascontiguousarray(y[rows]), np.ascontiguousarray(counts[rows]),
                                     order, max_depth, cfg.min_samples_leaf, mtry, kseed))

    sizes = [len(p[0]) for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cat = lambda j: np.concatenate([p[j] for p in parts])
    return ForestModel(cat(0), cat(1), cat(2), cat(3), cat(4), offsets, d, cfg)
