"""AUC, sensitivity/specificity and normal-approximation confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = ["MetricSummary", "auc", "sens_spec", "ci_normal", "roc_points"]

Z95 = 1.96


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    ci_low: float
    ci_high: float
    n: int

    def fmt(self, digits: int = 4) -> str:
        return f"{self.mean:.{digits}f}; 95% CI: [{self.ci_low:.{digits}f}, {self.ci_high:.{digits}f}]"


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    npos = int(np.sum(y == 1))
    if npos == 0 or npos == y.size:
        raise ValueError("AUC needs both classes")
    return s, y.astype(np.int64), npos, y.size - npos


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: (wins + ties / 2) / (n_pos * n_neg).

    Mid-ranks give the tie half-credit; the rank sum is an exact integer
    multiple of 1/2, so the result matches pair counting to rounding.
    """
    s, y, npos, nneg = _check(scores, labels)
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


def sens_spec(scores, labels, threshold: float) -> tuple[float, float]:
    """Positive call is ``score >= threshold``. Each rate needs its own class
    present; a missing class yields NaN for that rate."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise ValueError("scores and labels differ in length")
    pos = s >= threshold
    n1 = int(np.sum(y == 1))
    n0 = int(np.sum(y == 0))
    if n1 == 0 and n0 == 0:
        raise ValueError("no labels")
    sens = float(np.sum(pos & (y == 1)) / n1) if n1 else math.nan
    spec = float(np.sum(~pos & (y == 0)) / n0) if n0 else math.nan
    return sens, spec


def ci_normal(values) -> MetricSummary:
    """mean +- 1.96 * sd / sqrt(n) with the sample (n - 1) sd."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("no values to summarize")
    if np.all(v == v[0]):
        # exact point: summation rounding would otherwise open a tiny interval
        x = float(v[0])
        return MetricSummary(x, x, x, int(v.size))
    mean = float(v.mean())
    half = Z95 * float(v.std(ddof=1)) / math.sqrt(v.size)
    return MetricSummary(mean, mean - half, mean + half, int(v.size))


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) at every distinct threshold, from (0, 0) to (1, 1)."""
    s, y, npos, nneg = _check(scores, labels)
    thr = np.unique(s)[::-1]
    tpr = [0.0] + [float(np.sum((s >= t) & (y == 1)) / npos) for t in thr]
    fpr = [0.0] + [float(np.sum((s >= t) & (y == 0)) / nneg) for t in thr]
    return np.asarray(fpr), np.asarray(tpr)
