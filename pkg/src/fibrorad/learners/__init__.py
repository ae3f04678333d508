"""The four model families of the sweep and their hyperparameter grids."""

from __future__ import annotations

import numpy as np

from .base import (
    HYPER_GRIDS,
    MODEL_KINDS,
    MODEL_TITLES,
    SchemaError,
    TrainedModel,
    grid_combos,
    predict_score,
)
from .forest import score_rf, train_rf
from .logreg import fit_logistic, logistic_objective, score_logreg, train_logreg
from .sgd import score_sgd, train_sgd
from .svm import score_svm, train_svm

_SCORERS = {
    "logreg": score_logreg,
    "rf": score_rf,
    "svm": score_svm,
    "sgd": score_sgd,
}

__all__ = [
    "HYPER_GRIDS",
    "MODEL_KINDS",
    "MODEL_TITLES",
    "SchemaError",
    "TrainedModel",
    "grid_combos",
    "predict_score",
    "train_model",
    "train_logreg",
    "train_rf",
    "train_svm",
    "train_sgd",
    "fit_logistic",
    "logistic_objective",
]


def train_model(kind: str, X, y, hyper: dict, seed: int, features=None, importance: bool = True) -> TrainedModel:
    """Dispatch one fit; ``seed`` drives every stochastic part of the fit."""
    if kind == "logreg":
        return train_logreg(X, y, hyper["solver"], hyper["C"], seed=seed, features=features)
    if kind == "rf":
        return train_rf(X, y, hyper["n_estimators"], hyper["max_features"], hyper["max_depth"],
                        rng=np.random.default_rng(seed), seed=seed, features=features)
    if kind == "svm":
        return train_svm(X, y, hyper["kernel"], hyper["C"], rng=np.random.default_rng(seed),
                         seed=seed, features=features, importance=importance)
    if kind == "sgd":
        return train_sgd(X, y, hyper["loss"], hyper["alpha"], seed=seed, features=features)
    raise ValueError(f"unknown model kind {kind!r}")
