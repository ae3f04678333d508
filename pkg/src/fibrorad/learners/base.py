from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

MODEL_KINDS = ("logreg", "rf", "svm", "sgd")
MODEL_TITLES = {
    "logreg": "Logistic Regression",
    "rf": "Random Forest",
    "svm": "SVM",
    "sgd": "Linear with SGD",
}

# candidate values per model family, in canonical grid order
HYPER_GRIDS = {
    "logreg": {"solver": ["lbfgs", "newton-cg", "sag", "saga"], "C": [0.5, 1.0, 1.5]},
    "rf": {"n_estimators": [50, 100, 200], "max_features": ["auto", "sqrt"], "max_depth": [None, 5, 100]},
    "svm": {"kernel": ["linear", "poly", "rbf"], "C": [0.5, 1.0, 1.5]},
    "sgd": {"alpha": [0.0001, 0.00001], "loss": ["log_loss", "modified_huber"]},
}


def grid_combos(kind: str) -> list[dict]:
    grid = HYPER_GRIDS[kind]
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


class SchemaError(ValueError):
    pass


def check_two_classes(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be a 1D 0/1 array")
    if y.min() == y.max():
        raise ValueError("training labels contain a single class")
    return y


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass
class TrainedModel:
    """A fitted classifier.

    ``score`` returns higher-is-more-fibrotic values: probabilities for
    logistic regression, forests and SGD (threshold 0.5) and raw decision
    values for the SVM (threshold 0).
    """

    kind: str
    hyper: dict
    features: tuple[str, ...]
    params: dict[str, np.ndarray]
    importance: np.ndarray
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def threshold(self) -> float:
        return 0.0 if self.kind == "svm" else 0.5

    def score(self, X) -> np.ndarray:
        from . import _SCORERS

        return _SCORERS[self.kind](self, np.asarray(X, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "hyperparameters": self.hyper,
            "schema": list(self.features),
            "seed": self.seed,
            "parameters": {k: np.asarray(v).tolist() for k, v in self.params.items()},
            "importance": self.importance.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        return cls(
            d["kind"], d["hyperparameters"], tuple(d["schema"]),
            {k: np.asarray(v) for k, v in d["parameters"].items()},
            np.asarray(d["importance"], dtype=np.float64), d.get("seed"),
        )


def predict_score(m: TrainedModel, X, features=None) -> np.ndarray:
    """Scores for the rows of ``X``; ``features`` (if given) must match the
    model's training schema exactly."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise SchemaError(f"expected {m.n_features} feature columns, got shape {X.shape}")
    if features is not None and tuple(features) != m.features:
        raise SchemaError("feature schema differs from the training schema")
    out = m.score(X)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite model scores")
    return out
