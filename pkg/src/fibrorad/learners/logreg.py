"""L2-regularized logistic regression with four solvers.

Objective (labels mapped to +-1, intercept unpenalized)::

    f(w, b) = sum_i log(1 + exp(-y_i (x_i.w + b))) + ||w||^2 / (2 C)
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy import optimize

from .base import TrainedModel, check_two_classes, sigmoid

SOLVERS = ("lbfgs", "newton-cg", "sag", "saga")
GRAD_TOL = 1e-6
MAX_OUTER = 1000
SAG_TOL = 1e-8
SAG_EPOCHS = 500


def logistic_objective(wb: np.ndarray, X: np.ndarray, ys: np.ndarray, C: float):
    """Objective value and gradient at the stacked parameter ``[w, b]``."""
    w, b = wb[:-1], wb[-1]
    m = ys * (X @ w + b)
    f = np.sum(np.logaddexp(0.0, -m)) + 0.5 / C * (w @ w)
    gz = -ys * sigmoid(-m)
    g = np.empty_like(wb)
    g[:-1] = X.T @ gz + w / C
    g[-1] = gz.sum()
    return f, g


def _lbfgs(X, ys, C, history=None):
    x0 = np.zeros(X.shape[1] + 1)

    def cb(xk):
        if history is not None:
            history.append(logistic_objective(xk, X, ys, C)[0])

    if history is not None:
        history.append(logistic_objective(x0, X, ys, C)[0])
    res = optimize.minimize(
        logistic_objective, x0, args=(X, ys, C), jac=True, method="L-BFGS-B", callback=cb,
        options={"gtol": GRAD_TOL, "ftol": 1e-15, "maxiter": MAX_OUTER, "maxcor": 20},
    )
    return res.x, res.nit


def _cg(hvp, rhs, tol=1e-10, max_iter=None):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = r @ r
    stop = tol * np.sqrt(rr)
    for _ in range(max_iter or 2 * rhs.size):
        if np.sqrt(rr) <= stop:
            break
        Hp = hvp(p)
        pHp = p @ Hp
        if pHp <= 0:
            break
        a = rr / pHp
        x += a * p
        r -= a * Hp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def _newton_cg(X, ys, C, history=None):
    n, p = X.shape
    wb = np.zeros(p + 1)
    f, g = logistic_objective(wb, X, ys, C)
    if history is not None:
        history.append(f)
    it = 0
    for it in range(1, MAX_OUTER + 1):
        if np.abs(g).max() < GRAD_TOL:
            break
        s = sigmoid(ys * (X @ wb[:-1] + wb[-1]))
        d = s * (1.0 - s)

        def hvp(v):
            u = X @ v[:-1] + v[-1]
            du = d * u
            out = np.empty_like(v)
            out[:-1] = X.T @ du + v[:-1] / C
            out[-1] = du.sum()
            return out

        step = _cg(hvp, -g)
        slope = g @ step
        if slope >= 0:
            step, slope = -g, -(g @ g)
        t = 1.0
        while True:
            f_new, g_new = logistic_objective(wb + t * step, X, ys, C)
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if f_new > f:
            break
        wb, f, g = wb + t * step, f_new, g_new
        if history is not None:
            history.append(f)
    return wb, it


@njit(cache=True)
def _sag_kernel(X, ys, C, saga, seed, max_epochs, tol):
    n, p = X.shape
    np.random.seed(seed)
    w = np.zeros(p)
    b = 0.0
    grad_mem = np.zeros(n)
    seen = np.zeros(n, dtype=np.bool_)
    n_seen = 0
    dsum = np.zeros(p)
    dsum_b = 0.0
    lam = 1.0 / (C * n)
    sq_max = 0.0
    for i in range(n):
        s = 0.0
        for j in range(p):
            s += X[i, j] * X[i, j]
        if s > sq_max:
            sq_max = s
    L = 0.25 * (sq_max + 1.0) + lam
    eta = 1.0 / L if not saga else 1.0 / (3.0 * L)

    def objective(w, b):
        f = 0.0
        for i in range(n):
            z = b
            for j in range(p):
                z += X[i, j] * w[j]
            m = ys[i] * z
            # log(1 + exp(-m)) without overflow
            f += max(-m, 0.0) + np.log1p(np.exp(-abs(m)))
        reg = 0.0
        for j in range(p):
            reg += w[j] * w[j]
        return f + 0.5 / C * reg

    f_prev = objective(w, b)
    epochs = 0
    for epoch in range(max_epochs):
        epochs = epoch + 1
        order = np.random.permutation(n)
        for k in range(n):
            i = order[k]
            z = b
            for j in range(p):
                z += X[i, j] * w[j]
            m = ys[i] * z
            g_new = -ys[i] / (1.0 + np.exp(m))
            g_old = grad_mem[i]
            if not seen[i]:
                seen[i] = True
                n_seen += 1
            if saga:
                denom = n
                for j in range(p):
                    w[j] -= eta * ((g_new - g_old) * X[i, j] + dsum[j] / denom + lam * w[j])
                b -= eta * ((g_new - g_old) + dsum_b / denom)
                for j in range(p):
                    dsum[j] += (g_new - g_old) * X[i, j]
                dsum_b += g_new - g_old
            else:
                for j in range(p):
                    dsum[j] += (g_new - g_old) * X[i, j]
                dsum_b += g_new - g_old
                for j in range(p):
                    w[j] -= eta * (dsum[j] / n_seen + lam * w[j])
                b -= eta * dsum_b / n_seen
            grad_mem[i] = g_new
        f = objective(w, b)
        if abs(f_prev - f) < tol:
            break
        f_prev = f
    out = np.empty(p + 1)
    out[:p] = w
    out[p] = b
    return out, epochs


def fit_logistic(X, y, solver: str = "lbfgs", C: float = 1.0, seed: int = 0, history=None):
    """Stacked ``[w, b]`` and iteration/epoch count."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    if not C > 0:
        raise ValueError("C must be positive")
    X = np.ascontiguousarray(X, dtype=np.float64)
    ys = 2.0 * check_two_classes(y) - 1.0
    if solver == "lbfgs":
        return _lbfgs(X, ys, C, history)
    if solver == "newton-cg":
        return _newton_cg(X, ys, C, history)
    return _sag_kernel(X, ys, float(C), solver == "saga", int(seed) % (2**31 - 1), SAG_EPOCHS, SAG_TOL)


def train_logreg(X, y, solver="lbfgs", C=1.0, seed=0, features=None) -> TrainedModel:
    wb, n_iter = fit_logistic(X, y, solver, C, seed)
    X = np.asarray(X)
    features = tuple(features) if features is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    return TrainedModel(
        "logreg", {"solver": solver, "C": C}, features,
        {"coef": wb[:-1].copy(), "intercept": np.array([wb[-1]])},
        np.abs(wb[:-1]), seed, {"n_iter": int(n_iter)},
    )


def score_logreg(m: TrainedModel, X):
    return sigmoid(X @ m.params["coef"] + m.params["intercept"][0])
