"""Feature selection: pass-through, PCA, Boruta and LASSO."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats

from .learners.base import SchemaError, check_two_classes
from .learners.forest import fit_forest

__all__ = [
    "SELECTOR_KINDS",
    "SELECTOR_TITLES",
    "Selection",
    "select_none",
    "select_pca",
    "select_boruta",
    "select_lasso",
    "lasso_cd",
    "lasso_lambda_max",
    "fit_selector",
    "apply_selection",
]

SELECTOR_KINDS = ("none", "pca", "boruta", "lasso")
SELECTOR_TITLES = {"none": "None", "pca": "PCA", "boruta": "Boruta", "lasso": "LASSO Regression"}
FALLBACK_TOP = 5


@dataclass
class Selection:
    """Either retained columns (``features``) or a PCA projection."""

    kind: str
    input_features: tuple[str, ...]
    features: tuple[str, ...]
    mean: np.ndarray | None = None
    components: np.ndarray | None = None  # (p, k), orthonormal columns
    info: dict = field(default_factory=dict)

    @property
    def output_features(self) -> tuple[str, ...]:
        if self.components is not None:
            return tuple(f"PC{i + 1}" for i in range(self.components.shape[1]))
        return self.features

    def to_json(self) -> str:
        d = {"kind": self.kind, "input_features": list(self.input_features)}
        if self.components is not None:
            d["mean"] = self.mean.tolist()
            d["components"] = self.components.tolist()
        else:
            d["features"] = list(self.features)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Selection":
        d = json.loads(text)
        if "components" in d:
            return cls(d["kind"], tuple(d["input_features"]), (), np.asarray(d["mean"]),
                       np.asarray(d["components"]))
        return cls(d["kind"], tuple(d["input_features"]), tuple(d["features"]))


def _names(X, features):
    if features is None:
        return tuple(f"x{i}" for i in range(X.shape[1]))
    if len(features) != X.shape[1]:
        raise SchemaError("feature names do not match matrix width")
    return tuple(features)


def select_none(X, features=None) -> Selection:
    names = _names(X, features)
    return Selection("none", names, names)


def apply_selection(sel: Selection, X, features=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != len(sel.input_features):
        raise SchemaError(f"expected {len(sel.input_features)} columns, got {X.shape[1]}")
    if features is not None and tuple(features) != sel.input_features:
        raise SchemaError("feature schema differs from the fit-time schema")
    if sel.components is not None:
        return (X - sel.mean) @ sel.components
    pos = {n: i for i, n in enumerate(sel.input_features)}
    return X[:, [pos[n] for n in sel.features]]


# --- PCA -----------------------------------------------------------------

def select_pca(X, features=None, variance_target: float = 0.95) -> Selection:
    """Smallest number of leading components explaining >= ``variance_target``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("PCA needs at least 2 rows")
    names = _names(X, features)
    mean = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    eig = s ** 2 / (X.shape[0] - 1)
    total = eig.sum()
    if total <= 0:
        k = 1
    else:
        ratio = np.cumsum(eig) / total
        k = int(np.searchsorted(ratio, variance_target - 1e-12) + 1)
        k = min(k, Vt.shape[0])
    return Selection("pca", names, (), mean, Vt[:k].T.copy(), {"eigenvalues": eig})


# --- Boruta --------------------------------------------------------------

BORUTA_TREES = 100


def select_boruta(X, y, rng: np.random.Generator, features=None, max_iter: int = 100,
                  alpha: float = 0.05, n_trees: int = BORUTA_TREES) -> Selection:
    """Shadow-feature relevance test.

    Each round fits a forest on the real columns plus independently permuted
    shadow copies; a real column scores a hit when its impurity importance
    beats the best shadow. After ``max_iter`` rounds a column is confirmed if
    its hit count is significantly above Binomial(max_iter, 1/2) (two-sided,
    Bonferroni over columns). Without confirmations the five columns with the
    highest mean importance are returned.
    """
    X = np.asarray(X, dtype=np.float64)
    y = check_two_classes(y)
    names = _names(X, features)
    n, p = X.shape
    if p < 2:
        raise ValueError("Boruta needs at least 2 features")
    hits = np.zeros(p, dtype=np.int64)
    imp_sum = np.zeros(p)
    for _ in range(max_iter):
        shadow = np.empty_like(X)
        for j in range(p):
            shadow[:, j] = X[rng.permutation(n), j]
        _, imp = fit_forest(np.hstack([X, shadow]), y, n_trees, "sqrt", None, rng)
        real, shad = imp[:p], imp[p:]
        hits += real > shad.max()
        imp_sum += real
    pvals = np.array([stats.binomtest(int(h), max_iter, 0.5, alternative="two-sided").pvalue for h in hits])
    confirmed = (hits > max_iter / 2) & (pvals < alpha / p)
    info = {"hits": hits, "confirmed": confirmed, "mean_importance": imp_sum / max_iter}
    if confirmed.any():
        keep = np.flatnonzero(confirmed)
    else:
        keep = np.sort(np.argsort(-imp_sum, kind="stable")[:FALLBACK_TOP])
        info["fallback"] = True
    return Selection("boruta", names, tuple(names[j] for j in keep), info=info)


# --- LASSO ---------------------------------------------------------------

LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000
LASSO_GRID = 20
LASSO_FOLDS = 5


@njit(cache=True)
def _cd(Xc, yc, lam, w, tol, max_sweeps, history):
    n, p = Xc.shape
    col_sq = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += Xc[i, j] * Xc[i, j]
        col_sq[j] = s / n
    r = yc.copy()
    for j in range(p):
        if w[j] != 0.0:
            for i in range(n):
                r[i] -= Xc[i, j] * w[j]
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        max_delta = 0.0
        max_w = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            rho = 0.0
            for i in range(n):
                rho += Xc[i, j] * r[i]
            rho = rho / n + col_sq[j] * w[j]
            # relative guard so lambda_max zeroes every weight despite summation order
            if abs(rho) <= lam * (1.0 + 1e-12):
                new = 0.0
            elif rho > lam:
                new = (rho - lam) / col_sq[j]
            elif rho < -lam:
                new = (rho + lam) / col_sq[j]
            else:
                new = 0.0
            d = new - w[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= Xc[i, j] * d
                w[j] = new
            if abs(d) > max_delta:
                max_delta = abs(d)
            if abs(new) > max_w:
                max_w = abs(new)
        if history.size > 0 and sweep < history.size:
            obj = 0.0
            for i in range(n):
                obj += r[i] * r[i]
            obj = obj / (2.0 * n)
            for j in range(p):
                obj += lam * abs(w[j])
            history[sweep] = obj
        if max_delta <= tol * max(max_w, 1.0):
            break
    return w, sweeps


def lasso_lambda_max(X, y) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    return float(np.abs(Xc.T @ (y - y.mean())).max() / X.shape[0])


def lasso_cd(X, y, lam: float, history: np.ndarray | None = None):
    """Minimize ``||y - b - X w||^2 / (2 n) + lam * ||w||_1`` by cyclic
    coordinate descent (intercept handled by centering).

    Returns ``(w, b, sweeps)``. If ``history`` is given it receives the
    objective after each sweep.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = X.mean(axis=0), y.mean()
    Xc = np.ascontiguousarray(X - xm)
    hist = history if history is not None else np.empty(0)
    w, sweeps = _cd(Xc, y - ym, float(lam), np.zeros(X.shape[1]), LASSO_TOL, LASSO_MAX_SWEEPS, hist)
    return w, ym - xm @ w, sweeps


def _folds(n: int, k: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


def select_lasso(X, y, rng: np.random.Generator, features=None, lam: float | None = None) -> Selection:
    """LASSO on the 0/1 labels with lambda picked by 5-fold CV squared error
    over a 20-point log grid from lambda_max down to lambda_max / 1000.

    Passing ``lam`` skips the CV. An all-zero solution falls back to the five
    columns with the largest |corr(feature, y)|.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    names = _names(X, features)
    n, p = X.shape
    lmax = lasso_lambda_max(X, y)
    info = {"lambda_max": lmax}
    if lam is None:
        grid = lmax * np.logspace(0, -3, LASSO_GRID)
        folds = _folds(n, min(LASSO_FOLDS, n), rng)
        cv = np.zeros(LASSO_GRID)
        for test in folds:
            train = np.setdiff1d(np.arange(n), test)
            for g, l in enumerate(grid):
                w, b, _ = lasso_cd(X[train], y[train], l)
                cv[g] += np.sum((y[test] - b - X[test] @ w) ** 2)
        lam = float(grid[int(np.argmin(cv))])
        info["cv_error"] = cv / n
    info["lambda"] = lam
    w, b, _ = lasso_cd(X, y, lam)
    keep = np.flatnonzero(w != 0)
    if keep.size == 0:
        info["fallback"] = True
        Xc = X - X.mean(axis=0)
        yc = y - y.mean()
        denom = np.sqrt(np.sum(Xc ** 2, axis=0) * np.sum(yc ** 2))
        corr = np.zeros(p)
        ok = denom > 0
        corr[ok] = np.abs(Xc[:, ok].T @ yc) / denom[ok]
        keep = np.sort(np.argsort(-corr, kind="stable")[:FALLBACK_TOP])
    info["coef"] = w
    return Selection("lasso", names, tuple(names[j] for j in keep), info=info)


def fit_selector(kind: str, X, y, features, rng: np.random.Generator) -> Selection:
    if kind == "none":
        return select_none(X, features)
    if kind == "pca":
        return select_pca(X, features)
    if kind == "boruta":
        return select_boruta(X, y, rng, features)
    if kind == "lasso":
        return select_lasso(X, y, rng, features)
    raise ValueError(f"unknown selector {kind!r}")
