"""Configuration sweep: nested repeated splits with a seeded grid search."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..learners import MODEL_KINDS, grid_combos, predict_score, train_model
from ..metrics import MetricSummary, auc, ci_normal
from ..normalize import NORMALIZATIONS
from ..selectors import SELECTOR_KINDS, apply_selection, fit_selector
from ..tabular import Cohort, SplitSpec, hygiene, smote, split

log = logging.getLogger(__name__)

CONTRASTS = ("NC", "CE")
NORMALIZATION_NAMES = tuple(n.name for n in NORMALIZATIONS)
AXES = ("contrast", "normalization", "model", "selector")
AXIS_VALUES = {
    "contrast": CONTRASTS,
    "normalization": NORMALIZATION_NAMES,
    "model": MODEL_KINDS,
    "selector": SELECTOR_KINDS,
}
DEV_FRACTION = 0.8
GRID_TRAIN_FRACTION = 0.75
GRID_RUNS = 30
SMOTE_K = 5
TOP_K = 5


@dataclass(frozen=True, order=True)
class Configuration:
    contrast: str
    normalization: str
    model: str
    selector: str

    def __post_init__(self):
        for axis in AXES:
            if getattr(self, axis) not in AXIS_VALUES[axis]:
                raise ValueError(f"unknown {axis} {getattr(self, axis)!r}")

    @property
    def name(self) -> str:
        return f"{self.contrast}/{self.normalization}/{self.model}/{self.selector}"

    @property
    def index(self) -> int:
        """Position in the canonical enumeration; drives seed derivation."""
        idx = 0
        for axis in AXES:
            values = AXIS_VALUES[axis]
            idx = idx * len(values) + values.index(getattr(self, axis))
        return idx


def enumerate_configs() -> list[Configuration]:
    return [Configuration(*vals) for vals in itertools.product(*(AXIS_VALUES[a] for a in AXES))]


def filter_configs(configs, expr: str | None) -> list[Configuration]:
    """Keep configs matching ``"axis=v1|v2,axis=v"`` (all terms must hold)."""
    if not expr:
        return list(configs)
    terms = {}
    for term in expr.split(","):
        if "=" not in term:
            raise ValueError(f"bad config filter term {term!r}")
        axis, values = (s.strip() for s in term.split("=", 1))
        if axis not in AXES:
            raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")
        wanted = set(v.strip() for v in values.split("|"))
        unknown = wanted - set(AXIS_VALUES[axis])
        if unknown:
            raise ValueError(f"unknown {axis} values {sorted(unknown)}")
        terms[axis] = terms.get(axis, wanted) & wanted
    return [c for c in configs if all(getattr(c, a) in v for a, v in terms.items())]


def experiment_seed(master_seed: int, config_index: int, experiment_index: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(config_index), int(experiment_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class ExperimentResult:
    config: Configuration
    experiment_index: int
    seed: int
    status: str = "ok"
    error: str = ""
    hyper: dict = field(default_factory=dict)
    auc_biopsy: float = math.nan
    auc_nonbiopsy: float = math.nan
    top5: list = field(default_factory=list)
    n_selected: int = 0
    grid_runs: list = field(default_factory=list)  # fits per combo, grid order
    grid_auc: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        d = asdict(self)
        d["config"] = asdict(self.config)
        for k in ("auc_biopsy", "auc_nonbiopsy"):
            if not math.isfinite(d[k]):
                d[k] = None
        d["grid_auc"] = [None if not math.isfinite(v) else v for v in d["grid_auc"]]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ExperimentResult":
        d = json.loads(line)
        d["config"] = Configuration(**d["config"])
        for k in ("auc_biopsy", "auc_nonbiopsy"):
            d[k] = math.nan if d[k] is None else d[k]
        d["grid_auc"] = [math.nan if v is None else v for v in d["grid_auc"]]
        return cls(**d)


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _selected(sel, c: Cohort) -> np.ndarray:
    return apply_selection(sel, c.X, c.features)


def grid_search(kind: str, selector: str, train: Cohort, val: Cohort, seed: int,
                runs: int = GRID_RUNS):
    """Mean validation AUC of ``runs`` seed-varied fits per grid combo.

    Returns ``(best_index, mean_aucs, fits_per_combo)``; ties go to the
    earliest combo in grid order.
    """
    s_smote, s_sel, s_fit = _child_seeds(seed, 3)
    train = smote(train, SMOTE_K, np.random.default_rng(s_smote))
    sel = fit_selector(selector, train.X, train.labels, train.features, np.random.default_rng(s_sel))
    Xt, Xv = _selected(sel, train), _selected(sel, val)
    combos = grid_combos(kind)
    means, counts = [], []
    for ci, hyper in enumerate(combos):
        seeds = _child_seeds(s_fit + ci, runs)
        scores = []
        for s in seeds:
            m = train_model(kind, Xt, train.labels, hyper, s, sel.output_features, importance=False)
            scores.append(auc(predict_score(m, Xv), val.labels))
        counts.append(len(scores))
        means.append(float(np.mean(scores)))
    best = int(np.argmax(means))  # first maximum
    return best, means, counts


def top_features(model, k: int = TOP_K) -> list[str]:
    order = np.argsort(-np.asarray(model.importance), kind="stable")[:k]
    return [model.features[i] for i in order]


def run_experiment(config: Configuration, internal: Cohort, nonbiopsy: Cohort, seed: int,
                   experiment_index: int = 0, runs: int = GRID_RUNS) -> ExperimentResult:
    """One nested split: dev/test, grid-train/val, grid search, refit, evaluate.

    Non-biopsy rows are only ever scored, never fitted on. Failures (for
    example a split leaving one class) are returned as ``status="failed"``.
    """
    res = ExperimentResult(config, experiment_index, int(seed))
    try:
        s_split, s_grid_split, s_grid, s_smote, s_sel, s_fit = _child_seeds(seed, 6)
        dev, test = split(internal, SplitSpec(DEV_FRACTION, s_split))
        test_nb = nonbiopsy.for_patients(test.patients())
        if set(dev.patient_id) & set(test_nb.patient_id):
            raise RuntimeError("non-biopsy evaluation rows overlap the development patients")
        dev, test, test_nb = hygiene(dev, test, test_nb)
        if dev.X.shape[1] == 0:
            raise ValueError("no features survive the correlation and variance filters")
        gtrain, gval = split(dev, SplitSpec(GRID_TRAIN_FRACTION, s_grid_split))
        best, means, counts = grid_search(config.model, config.selector, gtrain, gval, s_grid, runs)
        res.grid_auc, res.grid_runs = means, counts
        res.hyper = grid_combos(config.model)[best]

        train = smote(dev, SMOTE_K, np.random.default_rng(s_smote))
        sel = fit_selector(config.selector, train.X, train.labels, train.features, np.random.default_rng(s_sel))
        model = train_model(config.model, _selected(sel, train), train.labels, res.hyper, s_fit,
                            sel.output_features)
        res.n_selected = len(sel.output_features)
        res.auc_biopsy = auc(predict_score(model, _selected(sel, test)), test.labels)
        res.auc_nonbiopsy = auc(predict_score(model, _selected(sel, test_nb)), test_nb.labels)
        res.top5 = top_features(model)
    except Exception as exc:  # recorded, the sweep carries on
        res.status = "failed"
        res.error = f"{type(exc).__name__}: {exc}"
        log.warning("%s experiment %d failed: %s", config.name, experiment_index, res.error)
    return res


# --- sweep ---------------------------------------------------------------

_TABLES: dict = {}


def _init_worker(tables):
    global _TABLES
    _TABLES = tables


def _task(args):
    config, e, master_seed, runs = args
    internal, nonbiopsy = _TABLES[(config.contrast, config.normalization)]
    return run_experiment(config, internal, nonbiopsy, experiment_seed(master_seed, config.index, e), e, runs)


def run_sweep(configs, tables: dict, n_experiments: int = 100, master_seed: int = 0,
              jobs: int = 1, runs: int = GRID_RUNS) -> list[ExperimentResult]:
    """``tables[(contrast, normalization)] = (internal, nonbiopsy)``.

    Results come back in canonical (config index, experiment) order whatever
    the worker count.
    """
    configs = sorted(set(configs), key=lambda c: c.index)
    missing = {(c.contrast, c.normalization) for c in configs} - set(tables)
    if missing:
        raise KeyError(f"no feature tables for {sorted(missing)}")
    tasks = [(c, e, master_seed, runs) for c in configs for e in range(n_experiments)]
    if jobs <= 1:
        _init_worker(tables)
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(tables,)) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    return sorted(results, key=lambda r: (r.config.index, r.experiment_index))


def write_results(path, results) -> None:
    with open(path, "w") as fh:
        for r in sorted(results, key=lambda r: (r.config.index, r.experiment_index)):
            fh.write(r.to_json() + "\n")


def read_results(path) -> list[ExperimentResult]:
    with open(path) as fh:
        return [ExperimentResult.from_json(line) for line in fh if line.strip()]


# --- summaries -----------------------------------------------------------

@dataclass
class ConfigSummary:
    config: Configuration
    biopsy: MetricSummary | None
    nonbiopsy: MetricSummary | None
    n_ok: int
    n_failed: int


@dataclass
class SettingSummary:
    axis: str
    value: str
    biopsy: MetricSummary | None
    nonbiopsy: MetricSummary | None
    n_configs: int


@dataclass
class SweepSummary:
    configs: list[ConfigSummary]
    settings: list[SettingSummary]

    def top_configs(self, kind: str, k: int = 5) -> list[ConfigSummary]:
        rows = [c for c in self.configs if getattr(c, kind) is not None]
        return sorted(rows, key=lambda c: (-getattr(c, kind).mean, c.config.index))[:k]


def _summary(values) -> MetricSummary | None:
    v = [x for x in values if math.isfinite(x)]
    return ci_normal(v) if v else None


def _marginal(config_rows, results, kind) -> MetricSummary | None:
    means = [getattr(c, kind).mean for c in config_rows if getattr(c, kind) is not None]
    pooled = [getattr(r, f"auc_{kind}") for r in results if r.ok]
    if not means:
        return None
    centre = float(np.mean(means))
    s = ci_normal(pooled)
    half = (s.ci_high - s.ci_low) / 2
    return MetricSummary(centre, centre - half, centre + half, len(pooled))


def summarize(results) -> SweepSummary:
    by_config: dict[Configuration, list[ExperimentResult]] = {}
    for r in results:
        by_config.setdefault(r.config, []).append(r)
    rows = []
    for c in sorted(by_config, key=lambda c: c.index):
        rs = by_config[c]
        ok = [r for r in rs if r.ok]
        rows.append(ConfigSummary(c, _summary([r.auc_biopsy for r in ok]),
                                  _summary([r.auc_nonbiopsy for r in ok]), len(ok), len(rs) - len(ok)))
    settings = []
    for axis in AXES:
        for value in AXIS_VALUES[axis]:
            members = [row for row in rows if getattr(row.config, axis) == value]
            if not members:
                continue
            rs = [r for r in results if getattr(r.config, axis) == value]
            settings.append(SettingSummary(axis, value, _marginal(members, rs, "biopsy"),
                                           _marginal(members, rs, "nonbiopsy"), len(members)))
    return SweepSummary(rows, settings)


SUMMARY_FIELDS = ("scope", "contrast", "normalization", "model", "selector",
                  "auc_biopsy", "auc_biopsy_ci_low", "auc_biopsy_ci_high",
                  "auc_nonbiopsy", "auc_nonbiopsy_ci_low", "auc_nonbiopsy_ci_high",
                  "n", "n_failed")


def _cells(s: MetricSummary | None):
    if s is None:
        return ["", "", ""]
    return [format(s.mean, ".17g"), format(s.ci_low, ".17g"), format(s.ci_high, ".17g")]


def write_summary_csv(path, summary: SweepSummary) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in summary.configs:
            c = row.config
            w.writerow(["config", c.contrast, c.normalization, c.model, c.selector,
                        *_cells(row.biopsy), *_cells(row.nonbiopsy), row.n_ok, row.n_failed])
        for s in summary.settings:
            axes = ["*" if a != s.axis else s.value for a in AXES]
            w.writerow(["setting", *axes, *_cells(s.biopsy), *_cells(s.nonbiopsy), s.n_configs, ""])


def write_top_configs_csv(path, summary: SweepSummary, k: int = 5) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("roi_kind", "rank", "contrast", "normalization", "model", "selector",
                    "auc", "ci_low", "ci_high", "n"))
        for kind in ("biopsy", "nonbiopsy"):
            for rank, row in enumerate(summary.top_configs(kind, k), 1):
                s = getattr(row, kind)
                c = row.config
                w.writerow([kind, rank, c.contrast, c.normalization, c.model, c.selector,
                            *_cells(s), s.n])


def config_hash(configs) -> str:
    text = "\n".join(c.name for c in sorted(configs, key=lambda c: c.index))
    return hashlib.sha256(text.encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
