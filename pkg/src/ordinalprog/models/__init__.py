"""Ordinal outcome models and their JSON envelope."""

from __future__ import annotations

import json

import numpy as np

from ..outcome import CATEGORIES, THRESHOLDS
from .linear import (LinearFit, MnlrModel, PolrModel, combine_pvalues_z, lr_degrees_of_freedom, lr_test,
                     train_mnlr, train_polr)
from .network import (Adam, ApmModel, DeepModel, MlpConfig, embed_average, multinomial_head, ordinal_head,
                      token_matrix, train_apm, train_deep, weighted_bce_loss, weighted_ce_loss)

FORMAT_VERSION = 1

__all__ = [
    "Adam", "ApmModel", "DeepModel", "LinearFit", "MlpConfig", "MnlrModel", "PolrModel",
    "combine_pvalues_z", "embed_average", "load_model", "lr_degrees_of_freedom", "lr_test",
    "model_from_dict", "model_to_dict", "multinomial_head", "ordinal_head", "predict", "save_model",
    "token_matrix", "train_apm", "train_deep", "train_mnlr", "train_polr", "weighted_bce_loss",
    "weighted_ce_loss",
]


def predict(model, inputs) -> dict:
    """Deterministic prediction.

    Always returns ``{"profile": (n, 6)}``; multinomial models also return
    ``"distribution": (n, 7)``.
    """
    out = {"profile": model.predict_profile(inputs)}
    encoding = getattr(getattr(model, "config", None), "encoding", None)
    if isinstance(model, MnlrModel) or encoding == "multinomial":
        out["distribution"] = model.predict_proba(inputs)
    return out


def _arrays(d: dict) -> dict:
    return {k: {"shape": list(np.shape(v)), "values": np.asarray(v, dtype=float).ravel().tolist()}
            for k, v in d.items()}


def _unarrays(d: dict) -> dict:
    return {k: np.asarray(v["values"], dtype=float).reshape(v["shape"]) for k, v in d.items()}


def model_to_dict(model, metadata: dict | None = None) -> dict:
    meta = dict(getattr(model, "metadata", {}) or {})
    meta.update(metadata or {})
    scale = {"categories": list(CATEGORIES), "thresholds": list(THRESHOLDS)}
    if isinstance(model, (MnlrModel, PolrModel)):
        fit = model.fit
        meta.update({"loglik": fit.loglik, "n": fit.n, "converged": fit.converged, "n_iter": fit.n_iter})
        if isinstance(model, MnlrModel):
            params = {"weights": model.weights}
        else:
            params = {"coef": model.coef, "thresholds": model.thresholds}
        return {"format_version": FORMAT_VERSION, "kind": model.kind, "config": {"lam": model.lam},
                "scale": scale, "parameters": _arrays(params), "metadata": meta}
    config = model.config.to_dict()
    if isinstance(model, ApmModel):
        config["vocab_size"] = model.vocab_size
    else:
        config["n_features"] = model.n_features
    return {"format_version": FORMAT_VERSION, "kind": model.kind, "config": config, "scale": scale,
            "parameters": _arrays(model.params), "metadata": meta}


def model_from_dict(d: dict):
    kind = d["kind"]
    params = _unarrays(d["parameters"])
    meta = d.get("metadata", {})
    if kind == "mnlr":
        model = MnlrModel(params["weights"], d["config"].get("lam", 0.0))
    elif kind == "polr":
        model = PolrModel(params["coef"], params["thresholds"], d["config"].get("lam", 0.0))
    elif kind in ("deep", "apm"):
        cfg = dict(d["config"])
        size = cfg.pop("vocab_size", None) if kind == "apm" else cfg.pop("n_features")
        config = MlpConfig.from_dict(cfg)
        model = ApmModel(config, size) if kind == "apm" else DeepModel(config, size)
        model.params = params
        model.metadata = meta
        return model
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model.fit = LinearFit(loglik=meta.get("loglik", np.nan), n=meta.get("n", 0),
                          converged=meta.get("converged", False), n_iter=meta.get("n_iter", 0))
    model.metadata = meta
    return model


def save_model(model, path, metadata: dict | None = None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, metadata), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
