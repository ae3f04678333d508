"""Soft-margin SVM trained by SMO with second-order working-set selection."""

from __future__ import annotations

import numpy as np
from numba import njit

from .base import TrainedModel, check_two_classes

KKT_TOL = 1e-3
MAX_SMO_ITER = 1_000_000
PERMUTATION_REPEATS = 5
TAU = 1e-12


def kernel_matrix(A, B, kernel: str, gamma: float):
    if kernel == "linear":
        return A @ B.T
    if kernel == "poly":
        return (gamma * (A @ B.T) + 1.0) ** 3
    if kernel == "rbf":
        d2 = np.sum(A ** 2, axis=1)[:, None] + np.sum(B ** 2, axis=1)[None, :] - 2.0 * A @ B.T
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


def kernel_gamma(X, kernel: str) -> float:
    p = X.shape[1]
    if kernel == "rbf":
        var = X.var()
        return 1.0 / (p * var) if var > 0 else 1.0 / p
    return 1.0 / p


@njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.empty(n)
    for i in range(n):
        QD[i] = K[i, i]
    it = 0
    gap = np.inf
    while it < max_iter:
        # maximal violating i, second-order j
        gmax = -np.inf
        gi = -1
        for t in range(n):
            if y[t] == 1.0:
                if alpha[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    gi = t
            else:
                if alpha[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    gi = t
        gmax2 = -np.inf
        gj = -1
        obj_min = np.inf
        for t in range(n):
            if y[t] == 1.0:
                if alpha[t] > 0:
                    diff = gmax + G[t]
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    if diff > 0 and gi >= 0:
                        quad = QD[gi] + QD[t] - 2.0 * y[gi] * y[gi] * y[t] * K[gi, t]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= obj_min:
                            gj = t
                            obj_min = obj
            else:
                if alpha[t] < C:
                    diff = gmax - G[t]
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    if diff > 0 and gi >= 0:
                        quad = QD[gi] + QD[t] + 2.0 * y[gi] * y[gi] * y[t] * K[gi, t]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= obj_min:
                            gj = t
                            obj_min = obj
        gap = gmax + gmax2
        if gap < tol or gj == -1:
            break
        i = gi
        j = gj
        Qij = y[i] * y[j] * K[i, j]
        ai = alpha[i]
        aj = alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = alpha[i] - ai
        daj = alpha[j] - aj
        for t in range(n):
            G[t] += y[t] * (y[i] * K[i, t] * dai + y[j] * K[j, t] * daj)
        it += 1

    # offset from free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    n_free = 0
    s_free = 0.0
    for i in range(n):
        yg = y[i] * G[i]
        if alpha[i] >= C:
            if y[i] == -1.0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[i] <= 0:
            if y[i] == 1.0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            s_free += yg
    if n_free > 0:
        rho = s_free / n_free
    else:
        rho = 0.5 * (ub + lb)
    return alpha, rho, it, gap


def solve_dual(X, y, kernel="linear", C=1.0):
    """Dual coefficients, offset ``rho`` (f(x) = sum a_i y_i K(x_i, x) - rho),
    iteration count and final KKT gap."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    ys = 2.0 * check_two_classes(y) - 1.0
    gamma = kernel_gamma(X, kernel)
    K = np.ascontiguousarray(kernel_matrix(X, X, kernel, gamma))
    alpha, rho, it, gap = _smo(K, ys, float(C), KKT_TOL, MAX_SMO_ITER)
    return alpha, rho, gamma, it, gap


def _decision(params, kernel, X):
    if kernel == "linear":
        return X @ params["coef"] - params["rho"][0]
    K = kernel_matrix(X, params["support"], kernel, params["gamma"][0])
    return K @ params["dual_coef"] - params["rho"][0]


def _auc(scores, y):
    from ..metrics import auc

    return auc(scores, y)


def permutation_importance(decision, X, y, rng, repeats=PERMUTATION_REPEATS):
    """Mean AUC drop when each column is shuffled, floored at zero."""
    base = _auc(decision(X), y)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        drops = []
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = Xp[rng.permutation(X.shape[0]), j]
            drops.append(base - _auc(decision(Xp), y))
        out[j] = max(0.0, float(np.mean(drops)))
    return out


def train_svm(X, y, kernel="linear", C=1.0, rng=None, seed=None, features=None,
              importance=True) -> TrainedModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = check_two_classes(y)
    alpha, rho, gamma, it, gap = solve_dual(X, y, kernel, C)
    ys = 2.0 * y - 1.0
    sv = alpha > 0
    params = {"rho": np.array([rho]), "gamma": np.array([gamma]), "alpha": alpha}
    if kernel == "linear":
        params["coef"] = (alpha * ys) @ X
    else:
        params["support"] = X[sv]
        params["dual_coef"] = (alpha * ys)[sv]
    features = tuple(features) if features is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    if kernel == "linear":
        imp = np.abs(params["coef"])
    elif importance:
        if rng is None:
            rng = np.random.default_rng(seed)
        imp = permutation_importance(lambda Z: _decision(params, kernel, Z), X, y, rng)
    else:
        imp = np.zeros(X.shape[1])
    return TrainedModel("svm", {"kernel": kernel, "C": C}, features, params, imp, seed,
                        {"n_iter": int(it), "kkt_gap": float(gap)})


def score_svm(m: TrainedModel, X):
    return _decision(m.params, m.hyper["kernel"], X)
