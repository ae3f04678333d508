"""Linear classifier trained by plain SGD with L2 shrinkage.

Step size follows ``eta_t = eta0 / (1 + eta0 * alpha * t)`` with t counting
updates from 1, so ``eta_t * alpha < 1`` and the shrink factor stays positive.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .base import TrainedModel, check_two_classes, sigmoid

ETA0 = 0.01
EPOCHS = 100
LOSSES = ("log_loss", "modified_huber")


@njit(cache=True)
def _sgd_kernel(X, ys, alpha, huber, seed, epochs, eta0):
    n, p = X.shape
    np.random.seed(seed)
    w = np.zeros(p)
    b = 0.0
    t = 1.0
    for _ in range(epochs):
        order = np.random.permutation(n)
        for k in range(n):
            i = order[k]
            s = b
            for j in range(p):
                s += X[i, j] * w[j]
            z = ys[i] * s
            if huber:
                if z >= 1.0:
                    dloss = 0.0
                elif z >= -1.0:
                    dloss = -2.0 * ys[i] * (1.0 - z)
                else:
                    dloss = -4.0 * ys[i]
            else:
                dloss = -ys[i] / (1.0 + np.exp(z))
            eta = eta0 / (1.0 + eta0 * alpha * t)
            shrink = 1.0 - eta * alpha
            for j in range(p):
                w[j] = shrink * w[j] - eta * dloss * X[i, j]
            b -= eta * dloss
            t += 1.0
    return w, b


def train_sgd(X, y, loss="log_loss", alpha=1e-4, rng=None, seed=None, features=None) -> TrainedModel:
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    if seed is None:
        if rng is None:
            raise ValueError("SGD needs a seed or generator")
        seed = int(rng.integers(0, 2**31 - 1))
    X = np.ascontiguousarray(X, dtype=np.float64)
    ys = 2.0 * check_two_classes(y) - 1.0
    w, b = _sgd_kernel(X, ys, float(alpha), loss == "modified_huber", int(seed) % (2**31 - 1), EPOCHS, ETA0)
    features = tuple(features) if features is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    return TrainedModel("sgd", {"alpha": alpha, "loss": loss}, features,
                        {"coef": w, "intercept": np.array([b])}, np.abs(w), seed)


def score_sgd(m: TrainedModel, X):
    return sigmoid(X @ m.params["coef"] + m.params["intercept"][0])
