"""Labeled feature matrices, cohort hygiene, patient-grouped splits and SMOTE."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Cohort",
    "SplitSpec",
    "split",
    "drop_correlated",
    "drop_low_variance",
    "minmax_scale",
    "align_features",
    "hygiene",
    "smote",
    "smote_arrays",
    "read_cohort_csv",
    "write_cohort_csv",
    "write_split_manifest",
]

META_COLUMNS = ("roi_id", "patient_id", "roi_kind", "fstage", "label")
SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class Cohort:
    X: np.ndarray
    features: tuple[str, ...]
    labels: np.ndarray
    fstage: np.ndarray
    patient_id: tuple[str, ...]
    roi_kind: tuple[str, ...]
    roi_id: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2D")
        n = X.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64)
        fstage = np.asarray(self.fstage, dtype=np.int64)
        features = tuple(self.features)
        roi_id = tuple(self.roi_id) or tuple(f"{p}:{k}" for p, k in zip(self.patient_id, self.roi_kind))
        if X.shape[1] != len(features):
            raise ValueError("feature names do not match matrix width")
        if len(set(features)) != len(features):
            raise ValueError("duplicate feature names")
        for name, col in (("labels", labels), ("fstage", fstage), ("patient_id", self.patient_id),
                          ("roi_kind", self.roi_kind), ("roi_id", roi_id)):
            if len(col) != n:
                raise ValueError(f"{name} has {len(col)} entries for {n} rows")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0/1")
        if np.any(labels != (fstage >= 1)):
            raise ValueError("label must equal (fstage >= 1)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fstage", fstage)
        object.__setattr__(self, "patient_id", tuple(self.patient_id))
        object.__setattr__(self, "roi_kind", tuple(self.roi_kind))
        object.__setattr__(self, "roi_id", roi_id)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def rows(self, idx) -> "Cohort":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda seq: tuple(seq[i] for i in idx)
        return Cohort(self.X[idx], self.features, self.labels[idx], self.fstage[idx],
                      pick(self.patient_id), pick(self.roi_kind), pick(self.roi_id))

    def columns(self, names) -> "Cohort":
        pos = {n: i for i, n in enumerate(self.features)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise KeyError(f"missing feature columns: {missing[:5]}")
        cols = [pos[n] for n in names]
        return replace(self, X=self.X[:, cols], features=tuple(names))

    def with_X(self, X, features=None) -> "Cohort":
        return replace(self, X=X, features=self.features if features is None else tuple(features))

    def patients(self) -> list[str]:
        return sorted(set(self.patient_id))

    def for_patients(self, patients) -> "Cohort":
        keep = set(patients)
        return self.rows([i for i, p in enumerate(self.patient_id) if p in keep])


@dataclass(frozen=True)
class SplitSpec:
    fraction: float
    seed: int

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ValueError("split fraction must lie in (0, 1)")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_patients(c: Cohort, spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Stratified patient partition; each class contributes round(f * n_class)
    patients to the first part."""
    label_of = {}
    for p, y in zip(c.patient_id, c.labels):
        if label_of.setdefault(p, y) != y:
            raise ValueError(f"patient {p} carries both labels")
    rng = np.random.default_rng(spec.seed)
    first, second = [], []
    for y in (0, 1):
        group = sorted(p for p, lab in label_of.items() if lab == y)
        if len(group) < 2:
            raise ValueError(f"class {y} has fewer than 2 patients; cannot split")
        group = [group[i] for i in rng.permutation(len(group))]
        k = _round_half_up(spec.fraction * len(group))
        first += group[:k]
        second += group[k:]
    return sorted(first), sorted(second)


def split(c: Cohort, spec: SplitSpec) -> tuple[Cohort, Cohort]:
    first, second = split_patients(c, spec)
    return c.for_patients(first), c.for_patients(second)


def _abs_corr(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    norm = np.sqrt(np.sum(Xc ** 2, axis=0))
    ok = norm > 0
    Z = np.zeros_like(Xc)
    Z[:, ok] = Xc[:, ok] / norm[ok]
    return np.abs(Z.T @ Z)


def drop_correlated(c: Cohort, threshold: float = 0.95) -> Cohort:
    """Scan columns in schema order; drop a column whose |Pearson r| with an
    already-kept column exceeds ``threshold``. Constant columns count as r = 0."""
    if c.n_rows < 2:
        raise ValueError("need at least 2 rows")
    R = _abs_corr(c.X)
    kept: list[int] = []
    for j in range(R.shape[0]):
        if not kept or R[j, kept].max() <= threshold:
            kept.append(j)
    return c.columns([c.features[j] for j in kept])


def drop_low_variance(c: Cohort, threshold: float = 0.05) -> Cohort:
    if c.n_rows < 2:
        raise ValueError("need at least 2 rows")
    var = c.X.var(axis=0)
    return c.columns([f for f, v in zip(c.features, var) if not v < threshold])


def minmax_scale(c: Cohort) -> Cohort:
    """Per-column map to [0, 1]; constant columns become 0."""
    lo = c.X.min(axis=0)
    span = c.X.max(axis=0) - lo
    out = np.zeros_like(c.X)
    ok = span > 0
    out[:, ok] = np.clip((c.X[:, ok] - lo[ok]) / span[ok], 0.0, 1.0)
    return c.with_X(out)


def align_features(dev: Cohort, test: Cohort) -> Cohort:
    """Restrict ``test`` to the development cohort's retained columns, in order."""
    return test.columns(list(dev.features))


def hygiene(dev: Cohort, *others: Cohort, corr: float = 0.95, var: float = 0.05):
    """Correlation filter, variance filter and scaling on ``dev``; every other
    cohort is aligned to dev's schema and scaled on its own."""
    kept = drop_low_variance(drop_correlated(dev, corr), var)
    out = [minmax_scale(kept)]
    for o in others:
        out.append(minmax_scale(align_features(kept, o)))
    return out if others else out[0]


def smote_arrays(X: np.ndarray, y: np.ndarray, k: int, rng: np.random.Generator):
    """Synthetic minority rows until both classes are equal.

    Returns ``(X_new, y_new, base, partner)`` for the appended rows only;
    ``base``/``partner`` index the minority rows each sample interpolates.
    """
    y = np.asarray(y)
    counts = np.bincount(y, minlength=2)
    if counts[0] == counts[1]:
        return np.empty((0, X.shape[1])), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    minority = int(np.argmin(counts))
    idx = np.flatnonzero(y == minority)
    if idx.size < 2:
        raise ValueError("SMOTE needs at least 2 minority rows")
    kk = min(k, idx.size - 1)
    M = X[idx]
    d2 = np.sum((M[:, None, :] - M[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps neighbour choice deterministic under distance ties
    nn = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    n_new = int(abs(counts[0] - counts[1]))
    base = rng.integers(idx.size, size=n_new)
    partner = nn[base, rng.integers(kk, size=n_new)]
    u = rng.random(n_new)[:, None]
    X_new = M[base] + u * (M[partner] - M[base])
    return X_new, np.full(n_new, minority, dtype=np.int64), idx[base], idx[partner]


def smote(c: Cohort, k: int = 5, rng: np.random.Generator | None = None) -> Cohort:
    if rng is None:
        raise ValueError("smote needs an explicit seeded generator")
    X_new, y_new, base, _ = smote_arrays(c.X, c.labels, k, rng)
    if X_new.shape[0] == 0:
        return c
    n0 = c.n_rows
    return Cohort(
        np.vstack([c.X, X_new]),
        c.features,
        np.concatenate([c.labels, y_new]),
        np.concatenate([c.fstage, c.fstage[base]]),
        c.patient_id + tuple(f"{SYNTHETIC}-{i}" for i in range(len(y_new))),
        c.roi_kind + tuple(c.roi_kind[b] for b in base),
        c.roi_id + tuple(f"{SYNTHETIC}-{n0 + i}" for i in range(len(y_new))),
    )


# --- CSV -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_cohort_csv(c: Cohort, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(META_COLUMNS) + list(c.features))
        for i in range(c.n_rows):
            w.writerow([c.roi_id[i], c.patient_id[i], c.roi_kind[i], int(c.fstage[i]),
                        int(c.labels[i])] + [_fmt(v) for v in c.X[i]])


def read_cohort_csv(path: str | os.PathLike) -> Cohort:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:5]) != META_COLUMNS:
            raise ValueError(f"{path}: expected leading columns {META_COLUMNS}")
        rows = list(reader)
    features = header[5:]
    X = np.array([[float(v) for v in r[5:]] for r in rows], dtype=np.float64).reshape(len(rows), len(features))
    return Cohort(
        X, features,
        [int(r[4]) for r in rows], [int(r[3]) for r in rows],
        [r[1] for r in rows], [r[2] for r in rows], [r[0] for r in rows],
    )


def write_split_manifest(path: str | os.PathLike, parts: dict[str, list[str]]) -> None:
    with open(path, "w") as fh:
        json.dump({k: sorted(v) for k, v in parts.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
