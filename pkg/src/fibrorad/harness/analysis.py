"""Feature ranking, curated simple models, the three-feature baseline and the
acquisition-confounder audit."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..learners import predict_score, train_logreg
from ..metrics import MetricSummary, auc, ci_normal, sens_spec
from ..roi import LiverMask
from ..tabular import Cohort, SplitSpec, minmax_scale, smote, split
from ..volume import ContrastPhase, Volume, clip_hu

log = logging.getLogger(__name__)

BIOPSY_SET = (
    "lbp-3D-k_firstorder_Maximum",
    "original_firstorder_Energy",
    "lbp-3D-k_firstorder_Kurtosis",
    "wavelet-LHL_glszm_SmallAreaHighGrayLevelEmphasis",
    "wavelet-LLH_glszm_SmallAreaHighGrayLevelEmphasis",
)
NONBIOPSY_SET = (
    "lbp-3D-k_firstorder_Maximum",
    "original_firstorder_Energy",
    "wavelet-LHL_glszm_SmallAreaHighGrayLevelEmphasis",
    "original_firstorder_Kurtosis",
    "original_firstorder_Skewness",
)
INTERSECTING_SET = (
    "lbp-3D-k_firstorder_Kurtosis",
    "lbp-3D-k_firstorder_Maximum",
    "original_firstorder_Energy",
    "original_firstorder_Kurtosis",
    "original_firstorder_Skewness",
)
CURATED_SETS = {"biopsy": BIOPSY_SET, "nonbiopsy": NONBIOPSY_SET, "intersecting": INTERSECTING_SET}
RANK_REPORT = 12


def rank_features(results, top_k: int = 5, report: int = RANK_REPORT) -> list[tuple[str, int]]:
    """Occurrence counts of per-experiment top features, most frequent first.

    PCA configurations and failed experiments are skipped: component names
    are not features.
    """
    counts: Counter = Counter()
    for r in results:
        if not r.ok or r.config.selector == "pca":
            continue
        counts.update(r.top5[:top_k])
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:report]


def average_roi_prediction(model, rows) -> float:
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if X.shape[0] == 0 or X.size == 0:
        raise ValueError("no ROI rows to average")
    return float(np.mean(predict_score(model, X)))


def _restrict(c: Cohort, names) -> Cohort:
    try:
        return c.columns(list(names))
    except KeyError as exc:
        raise ValueError(f"unknown feature in curated set: {exc}") from None


@dataclass
class EvalSummary:
    auc: MetricSummary
    sensitivity: MetricSummary | None
    specificity: MetricSummary | None


def _finite_summary(values):
    v = [x for x in values if not math.isnan(x)]
    return ci_normal(v) if v else None


def _evaluate(scores_per_repeat, labels, threshold) -> EvalSummary:
    aucs, sens, spec = [], [], []
    for s in scores_per_repeat:
        aucs.append(auc(s, labels))
        a, b = sens_spec(s, labels, threshold)
        sens.append(a)
        spec.append(b)
    return EvalSummary(ci_normal(aucs), _finite_summary(sens), _finite_summary(spec))


def train_simple(feature_set, internal: Cohort, external: dict[str, Cohort], n_repeats: int = 100,
                 master_seed: int = 0, C: float = 1.0) -> dict[str, EvalSummary]:
    """Logistic regression on a fixed feature list.

    Each repeat re-balances the internal rows with a fresh SMOTE draw, fits,
    and scores every external cohort (e.g. biopsy and non-biopsy rows).
    """
    train = minmax_scale(_restrict(internal, feature_set))
    tests = {k: minmax_scale(_restrict(c, feature_set)) for k, c in external.items()}
    scores = {k: [] for k in tests}
    for seed in np.random.SeedSequence(int(master_seed)).generate_state(n_repeats):
        bal = smote(train, 5, np.random.default_rng(int(seed)))
        m = train_logreg(bal.X, bal.labels, "lbfgs", C, seed=int(seed), features=bal.features)
        for k, c in tests.items():
            scores[k].append(predict_score(m, c.X, c.features))
    return {k: _evaluate(scores[k], tests[k].labels, 0.5) for k in tests}


# --- baseline ------------------------------------------------------------

CUBE_MM = 15.0
N_CUBES = 5


def _cube_sites(mask: LiverMask, side: int, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Up to ``n`` non-overlapping cube corners fully inside the mask."""
    # summed-area table: box count == side**3 means the cube [c, c + side) is all liver
    S = np.pad(mask.grid.astype(np.int64), ((1, 0), (1, 0), (1, 0))).cumsum(0).cumsum(1).cumsum(2)
    a, b = slice(None, -side), slice(side, None)
    count = (S[b, b, b] - S[a, b, b] - S[b, a, b] - S[b, b, a]
             + S[a, a, b] + S[a, b, a] + S[b, a, a] - S[a, a, a])
    valid = np.argwhere(count == side ** 3)
    sites: list[np.ndarray] = []
    if valid.shape[0] == 0:
        return sites
    for i in rng.permutation(valid.shape[0])[: 50 * n]:
        c = valid[i]
        if all(np.any(np.abs(c - s) >= side) for s in sites):
            sites.append(c)
            if len(sites) == n:
                break
    return sites


def _local_variance_sd(cube: np.ndarray) -> float:
    """sd over the cube of the 3x3 in-plane local variance (edge-replicated)."""
    p = np.pad(cube, ((1, 1), (1, 1), (0, 0)), mode="edge")
    nx, ny = cube.shape[:2]
    # offsets relative to the centre voxel keep constant inputs exactly zero
    diffs = np.stack([p[1 + dx: 1 + dx + nx, 1 + dy: 1 + dy + ny] - cube
                      for dx in (-1, 0, 1) for dy in (-1, 0, 1)])
    var = np.mean(diffs ** 2, axis=0) - np.mean(diffs, axis=0) ** 2
    return float(np.std(np.maximum(var, 0.0)))


def _haar_hh_mean(slice2d: np.ndarray) -> float:
    nx, ny = (s - s % 2 for s in slice2d.shape)
    a = slice2d[:nx:2, :ny:2]
    b = slice2d[1:nx:2, :ny:2]
    c = slice2d[:nx:2, 1:ny:2]
    d = slice2d[1:nx:2, 1:ny:2]
    return float(np.mean(np.abs((a - b) - (c - d)) / 2.0))


def baseline_features(v: Volume, mask: LiverMask, rng: np.random.Generator,
                      n_cubes: int = N_CUBES, cube_mm: float = CUBE_MM) -> np.ndarray:
    """(mean HU, sd of local variance, mean |HH|) averaged over random cubes."""
    mask.check_aligned(v)
    side = int(round(cube_mm / min(v.spacing)))
    sites = _cube_sites(mask, side, n_cubes, rng)
    if not sites:
        raise ValueError("liver mask cannot hold a single baseline cube")
    if len(sites) < n_cubes:
        log.warning("only %d of %d baseline cubes fit inside the mask", len(sites), n_cubes)
    vox = clip_hu(v, ContrastPhase.NC).voxels
    feats = []
    for s in sites:
        cube = vox[s[0]: s[0] + side, s[1]: s[1] + side, s[2]: s[2] + side]
        feats.append((cube.mean(), _local_variance_sd(cube), _haar_hh_mean(cube[:, :, side // 2])))
    return np.mean(feats, axis=0)


BASELINE_FEATURES = ("mean_intensity", "local_variance_sd", "haar2d_hh")


def baseline_hirano(internal, external, n_repeats: int = 10, master_seed: int = 0,
                    n_cubes: int = N_CUBES) -> EvalSummary:
    """Three hand-crafted features with L2 logistic regression (C = 1).

    ``internal``/``external`` yield ``(patient_id, label, Volume, LiverMask)``.
    Every repeat redraws the cubes; each volume is visited once.
    """
    seeds = np.random.SeedSequence(int(master_seed)).generate_state(n_repeats)

    def table(patients, salt):
        ids, labels, feats = [], [], []
        for k, (pid, label, v, mask) in enumerate(patients):
            rows = [baseline_features(v, mask, np.random.default_rng([int(s), salt, k]), n_cubes)
                    for s in seeds]
            ids.append(pid)
            labels.append(int(label))
            feats.append(rows)
        return ids, np.asarray(labels), np.asarray(feats).transpose(1, 0, 2)  # repeat, patient, feature

    _, y_in, F_in = table(internal, 0)
    _, y_ex, F_ex = table(external, 1)
    scores = []
    for r, seed in enumerate(seeds):
        tr = Cohort(F_in[r], BASELINE_FEATURES, y_in, y_in, [f"i{i}" for i in range(len(y_in))],
                    ["cube"] * len(y_in))
        te = Cohort(F_ex[r], BASELINE_FEATURES, y_ex, y_ex, [f"e{i}" for i in range(len(y_ex))],
                    ["cube"] * len(y_ex))
        tr, te = minmax_scale(tr), minmax_scale(te)
        m = train_logreg(tr.X, tr.labels, "lbfgs", 1.0, seed=int(seed), features=tr.features)
        scores.append(predict_score(m, te.X))
    return _evaluate(scores, y_ex, 0.5)


# --- confounder audit ----------------------------------------------------

@dataclass(frozen=True)
class AuditRecord:
    patient_id: str
    label: int
    radius_mm: float
    spacing: tuple[float, float, float]

    @property
    def sphere_volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius_mm ** 3


def confounder_audit(records, n_repeats: int = 20, master_seed: int = 0) -> dict[str, MetricSummary]:
    """Test AUC of logistic models that see only acquisition geometry.

    ``mesh_volume`` uses the analytic ROI volume, ``spacing`` the voxel
    spacing triple. Near-chance values mean the geometry carries no label
    information; a constant feature yields exactly 0.5.
    """
    records = list(records)
    y = np.array([r.label for r in records])
    pids = [r.patient_id for r in records]
    tables = {
        "mesh_volume": np.array([[r.sphere_volume] for r in records]),
        "spacing": np.array([list(r.spacing) for r in records], dtype=np.float64),
    }
    out = {}
    seeds = np.random.SeedSequence(int(master_seed)).generate_state(n_repeats)
    for name, X in tables.items():
        feats = [f"{name}_{i}" for i in range(X.shape[1])]
        c = Cohort(X, feats, y, y, pids, ["audit"] * len(y))
        aucs = []
        for s in seeds:
            dev, test = split(c, SplitSpec(0.8, int(s)))
            dev, test = minmax_scale(dev), minmax_scale(test)
            m = train_logreg(dev.X, dev.labels, "lbfgs", 1.0, seed=int(s), features=dev.features)
            aucs.append(auc(predict_score(m, test.X), test.labels))
        out[name] = ci_normal(aucs)
    return out
