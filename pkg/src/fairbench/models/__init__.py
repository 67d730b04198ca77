"""Weighted binary classifiers used as debiasing baselines."""
import json

from ._kernels import BACKEND, available_backends, get_backend
from .forest import ForestConfig, ForestModel, fit_forest
from .logistic import LogisticConfig, LogisticModel, fit_logistic, logistic_objective

MODEL_FORMAT = "fairbench-model"
MODEL_VERSION = 1

__all__ = [
    "BACKEND", "available_backends", "get_backend",
    "ForestConfig", "ForestModel", "fit_forest",
    "LogisticConfig", "LogisticModel", "fit_logistic", "logistic_objective",
    "make_config", "fit_model", "predict", "predict_scores", "save_model", "load_model",
]


def make_config(kind: str, params: dict | None = None, seed: int | None = None):
    params = dict(params or {})
    if seed is not None:
        params["seed"] = seed
    if kind == "logistic":
        return LogisticConfig(**params)
    if kind == "forest":
        return ForestConfig(**params)
    raise ValueError(f"unknown model kind {kind!r} (expected 'logistic' or 'forest')")


def fit_model(data, cfg):
    if isinstance(cfg, LogisticConfig):
        return fit_logistic(data, cfg)
    if isinstance(cfg, ForestConfig):
        return fit_forest(data, cfg)
    raise TypeError(f"unsupported model config {type(cfg).__name__}")


def predict(model, X):
    return model.predict(X)


def predict_scores(model, X):
    return model.predict_scores(X)


def save_model(model, path) -> None:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, **model.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')}")
    if doc["kind"] == "logistic":
        return LogisticModel.from_dict(doc)
    if doc["kind"] == "forest":
        return ForestModel.from_dict(doc)
    raise ValueError(f"{path}: unknown model kind {doc['kind']!r}")
