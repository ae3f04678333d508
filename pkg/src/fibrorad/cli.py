"""Batch driver: phantom, extract, sweep, rank, simple, baseline, audit, report.

Every command reads a JSON run config (``--config``) with flag overrides and
writes under the output directory::

    <out>/volumes, rois.csv, labels.csv      phantom
    <out>/features/*.csv, split.json         extract
    <out>/sweep/results.jsonl, *.csv         sweep
    <out>/rank, simple, baseline, audit      analyses
    <out>/report.md                          report

Exit status: 0 success, 2 invalid input or config, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import harness
from .metrics import MetricSummary
from .normalize import NORMALIZATIONS, Normalization
from .phantom import PhantomSpec, generate_cohort, read_labels, write_cohort
from .roi import LiverMask, read_manifest
from .tabular import Cohort, SplitSpec, read_cohort_csv, split_patients, write_cohort_csv, write_split_manifest
from .volume import ContrastPhase, VolumeFormatError, read_header, read_volume

log = logging.getLogger("fibrorad")


class ConfigError(ValueError):
    """Invalid run configuration or missing inputs (exit status 2)."""


@dataclass
class RunConfig:
    out_dir: str = "run"
    volumes_dir: str | None = None
    rois: str | None = None
    labels: str | None = None
    master_seed: int | None = None
    configs: str | None = None
    n_experiments: int = 100
    n_repeats: int = 100
    grid_runs: int = harness.GRID_RUNS
    target_spacing: float = 0.5
    phases: list = field(default_factory=lambda: ["NC", "CE"])
    normalizations: list = field(default_factory=lambda: [n.name for n in NORMALIZATIONS])
    external_fraction: float = 0.2
    simple_phase: str = "NC"
    simple_normalization: str = "gamma1.5"
    baseline_repeats: int = 10
    audit_repeats: int = 20
    jobs: int = 1
    phantom: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    # derived paths
    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def path(self, name: str, default: str) -> Path:
        value = getattr(self, name)
        return Path(value) if value else self.out / default

    def validate(self) -> None:
        if self.master_seed is None:
            raise ConfigError("a master seed is required (--seed, RUN_SEED or master_seed)")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError(f"master seed must be a non-negative integer, got {self.master_seed!r}")
        for name in ("n_experiments", "n_repeats", "grid_runs", "baseline_repeats", "audit_repeats", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.target_spacing > 0:
            raise ConfigError("target_spacing must be positive")
        if not 0 < self.external_fraction < 1:
            raise ConfigError("external_fraction must lie in (0, 1)")
        for p in self.phases:
            if p not in ContrastPhase.__members__:
                raise ConfigError(f"unknown contrast phase {p!r}")
        try:
            [Normalization.parse(n) for n in self.normalizations]
            harness.filter_configs(harness.enumerate_configs(), self.configs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def phase_list(self):
        return tuple(ContrastPhase[p] for p in self.phases)

    def norm_list(self):
        return tuple(Normalization.parse(n) for n in self.normalizations)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


# --- phantom -------------------------------------------------------------

def cmd_phantom(cfg: RunConfig) -> None:
    p = dict(cfg.phantom)
    counts = (p.pop("n_label0", 26), p.pop("n_label1", 40))
    jitter = p.pop("axis_jitter_mm", 10.0)
    spec_fields = {f.name for f in fields(PhantomSpec)} - {"class_label", "seed"}
    unknown = set(p) - spec_fields
    if unknown:
        raise ConfigError(f"unknown phantom parameters: {sorted(unknown)}")
    for key in ("spacing", "semi_axes_mm", "smoothing_mm"):
        if key in p:
            v = p[key]
            p[key] = tuple(float(x) for x in (v if isinstance(v, (list, tuple)) else [v] * (2 if key == "smoothing_mm" else 3)))
    try:
        base = PhantomSpec(**p)
        base.validate()
        cohort = generate_cohort(counts, cfg.master_seed, base, jitter)
    except ValueError as exc:
        raise ConfigError(f"invalid phantom parameters: {exc}") from None
    paths = write_cohort(cohort, cfg.out)
    log.info("wrote %d patients to %s", len(cohort.patients), paths["volumes"])


# --- extract -------------------------------------------------------------

def _inputs(cfg: RunConfig):
    vol_dir = _require(cfg.path("volumes_dir", "volumes"), "volumes directory")
    manifest = read_manifest(_require(cfg.path("rois", "rois.csv"), "ROI manifest"))
    labels = read_labels(_require(cfg.path("labels", "labels.csv"), "labels file"))
    rois: dict[str, list] = {}
    for pid, roi in manifest:
        rois.setdefault(pid, []).append(roi)
    missing = sorted(set(labels) - set(rois))
    if missing:
        raise ConfigError(f"patients without ROIs: {missing[:5]}")
    return vol_dir, rois, labels


def _extract_one(args):
    pid, fstage, label, vol_dir, rois, phases, norms, t = args
    volumes = {ph: read_volume(Path(vol_dir) / f"{pid}_{ph.name}.mhd") for ph in phases}
    return harness.patient_rows(pid, fstage, label, volumes, rois, phases, norms, t)


def _feature_path(cfg, phase, kind, norm) -> Path:
    return cfg.out / "features" / f"{phase}_{kind}_{norm}.csv"


def cmd_extract(cfg: RunConfig) -> None:
    vol_dir, rois, labels = _inputs(cfg)
    phases, norms = cfg.phase_list(), cfg.norm_list()
    pids = sorted(labels)
    for pid in pids:
        for ph in phases:
            _require(vol_dir / f"{pid}_{ph.name}.mhd", "volume")
    tasks = [(pid, *labels[pid], str(vol_dir), rois[pid], phases, norms, cfg.target_spacing) for pid in pids]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            out = list(pool.map(_extract_one, tasks))
    else:
        out = [_extract_one(t) for t in tasks]
    tables = harness.assemble_tables([rows for rows, _ in out])
    n_flags = sum(len(f) for _, f in out)
    if n_flags:
        log.warning("%d ROI extractions carried degenerate-feature flags", n_flags)
    (cfg.out / "features").mkdir(parents=True, exist_ok=True)
    for (phase, kind, norm), c in sorted(tables.items()):
        write_cohort_csv(c, _feature_path(cfg, phase, kind, norm))
    # internal / external partition, fixed by the master seed
    any_table = tables[sorted(tables)[0]]
    ext, internal = split_patients(any_table, SplitSpec(cfg.external_fraction, cfg.master_seed))
    write_split_manifest(cfg.out / "features" / "split.json", {"internal": internal, "external": ext})
    log.info("extracted %d tables for %d patients", len(tables), len(pids))


def _load_split(cfg) -> dict[str, list[str]]:
    with open(_require(cfg.out / "features" / "split.json", "split manifest")) as fh:
        return json.load(fh)


def _load_table(cfg, phase, kind, norm) -> Cohort:
    return read_cohort_csv(_require(_feature_path(cfg, phase, kind, norm), "feature table"))


# --- sweep / rank --------------------------------------------------------

def _selected_configs(cfg):
    """Filter expression intersected with the extracted phases and normalizations."""
    norms = {n.name for n in cfg.norm_list()}
    return [c for c in harness.filter_configs(harness.enumerate_configs(), cfg.configs)
            if c.contrast in cfg.phases and c.normalization in norms]


def cmd_sweep(cfg: RunConfig) -> None:
    configs = _selected_configs(cfg)
    if not configs:
        raise ConfigError("config filter selects no configurations")
    internal = _load_split(cfg)["internal"]
    tables, hashes = {}, {}
    for phase, norm in sorted({(c.contrast, c.normalization) for c in configs}):
        pair = []
        for kind in ("biopsy", "nonbiopsy"):
            path = _feature_path(cfg, phase, kind, norm)
            pair.append(_load_table(cfg, phase, kind, norm).for_patients(internal))
            hashes[path.name] = harness.file_hash(path)
        tables[(phase, norm)] = tuple(pair)
    results = harness.run_sweep(configs, tables, cfg.n_experiments, cfg.master_seed, cfg.jobs, cfg.grid_runs)
    out = cfg.out / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    harness.write_results(out / "results.jsonl", results)
    summary = harness.summarize(results)
    harness.write_summary_csv(out / "summary.csv", summary)
    harness.write_top_configs_csv(out / "top_configs.csv", summary)
    failed = sum(not r.ok for r in results)
    manifest = {
        "master_seed": cfg.master_seed,
        "n_experiments": cfg.n_experiments,
        "grid_runs": cfg.grid_runs,
        "configs": [c.name for c in configs],
        "config_hash": harness.config_hash(configs),
        "cohort_files": hashes,
        "n_results": len(results),
        "n_failed": failed,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if failed:
        log.warning("%d of %d experiments failed; see results.jsonl", failed, len(results))


def cmd_rank(cfg: RunConfig) -> None:
    results = harness.read_results(_require(cfg.out / "sweep" / "results.jsonl", "sweep results"))
    out = cfg.out / "rank"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rank", "feature", "count"))
        for i, (name, count) in enumerate(harness.rank_features(results), 1):
            w.writerow((i, name, count))


# --- simple / baseline / audit -------------------------------------------

METRIC_FIELDS = ("model", "roi_kind", "metric", "mean", "ci_low", "ci_high", "n")


def _metric_rows(model: str, kind: str, ev) -> list:
    rows = []
    for metric in ("auc", "sensitivity", "specificity"):
        s: MetricSummary | None = getattr(ev, metric)
        if s is not None:
            rows.append((model, kind, metric, *(format(v, ".17g") for v in (s.mean, s.ci_low, s.ci_high)), s.n))
    return rows


def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_simple(cfg: RunConfig) -> None:
    split_ = _load_split(cfg)
    phase, norm = cfg.simple_phase, cfg.simple_normalization
    bio = _load_table(cfg, phase, "biopsy", norm)
    nonbio = _load_table(cfg, phase, "nonbiopsy", norm)
    internal = bio.for_patients(split_["internal"])
    external = {"biopsy": bio.for_patients(split_["external"]),
                "nonbiopsy": nonbio.for_patients(split_["external"])}
    rows = []
    for name, fset in harness.CURATED_SETS.items():
        res = harness.train_simple(fset, internal, external, cfg.n_repeats, cfg.master_seed)
        for kind, ev in res.items():
            rows += _metric_rows(f"simple-{name}", kind, ev)
    _write_rows(cfg.out / "simple" / "simple.csv", METRIC_FIELDS, rows)


def _patient_volumes(cfg, pids, labels, vol_dir):
    for pid in pids:
        v = read_volume(_require(vol_dir / f"{pid}_NC.mhd", "volume"))
        mask = LiverMask.from_volume(read_volume(_require(vol_dir / f"{pid}_mask.mhd", "liver mask")))
        yield pid, labels[pid][1], v, mask


def cmd_baseline(cfg: RunConfig) -> None:
    vol_dir, _, labels = _inputs(cfg)
    split_ = _load_split(cfg)
    ev = harness.baseline_hirano(_patient_volumes(cfg, split_["internal"], labels, vol_dir),
                                 _patient_volumes(cfg, split_["external"], labels, vol_dir),
                                 cfg.baseline_repeats, cfg.master_seed)
    _write_rows(cfg.out / "baseline" / "baseline.csv", METRIC_FIELDS, _metric_rows("baseline", "cube", ev))


def cmd_audit(cfg: RunConfig) -> None:
    vol_dir, rois, labels = _inputs(cfg)
    records = {"biopsy": [], "nonbiopsy": []}
    for pid in sorted(labels):
        _, spacing, _ = read_header(_require(vol_dir / f"{pid}_NC.mhd", "volume"))
        for roi in rois[pid]:
            records[roi.kind.value].append(
                harness.AuditRecord(pid, labels[pid][1], roi.radius, tuple(spacing)))
    rows = []
    for kind, recs in records.items():
        if not recs:
            continue
        for model, s in harness.confounder_audit(recs, cfg.audit_repeats, cfg.master_seed).items():
            rows.append((model, kind, "auc", *(format(v, ".17g") for v in (s.mean, s.ci_low, s.ci_high)), s.n))
    _write_rows(cfg.out / "audit" / "audit.csv", METRIC_FIELDS, rows)


# --- report --------------------------------------------------------------

def _read_csv(path: Path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt_ci(mean, lo, hi) -> str:
    if mean == "":
        return "n/a"
    return f"{float(mean):.4f}; 95% CI: {float(lo):.4f}, {float(hi):.4f}"


def _table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return out + [""]


def render_report(out: Path) -> str:
    lines = ["# Results", ""]
    summary = out / "sweep" / "summary.csv"
    if summary.exists():
        rows = _read_csv(summary)
        lines += ["## Average test AUC per setting value", ""]
        body = []
        for r in rows:
            if r["scope"] != "setting":
                continue
            axis = next(a for a in harness.AXES if r[a] != "*")
            body.append((axis, r[axis], _fmt_ci(r["auc_biopsy"], r["auc_biopsy_ci_low"], r["auc_biopsy_ci_high"]),
                         _fmt_ci(r["auc_nonbiopsy"], r["auc_nonbiopsy_ci_low"], r["auc_nonbiopsy_ci_high"])))
        lines += _table(("Setting", "Value", "Biopsy-based AUC", "Non-biopsy AUC"), body)
    top = out / "sweep" / "top_configs.csv"
    if top.exists():
        lines += ["## Top configurations", ""]
        body = [(r["roi_kind"], r["rank"], r["normalization"], r["selector"], r["model"], r["contrast"],
                 _fmt_ci(r["auc"], r["ci_low"], r["ci_high"])) for r in _read_csv(top)]
        lines += _table(("ROI", "Rank", "Normalization", "Selection", "Model", "Contrast", "AUC"), body)
    rank = out / "rank" / "features.csv"
    if rank.exists():
        lines += ["## Most frequent top-5 features", ""]
        lines += _table(("Rank", "Feature", "Count"), [(r["rank"], r["feature"], r["count"]) for r in _read_csv(rank)])
    for title, path in (("Simple models", out / "simple" / "simple.csv"),
                        ("Baseline", out / "baseline" / "baseline.csv"),
                        ("Acquisition confounder audit", out / "audit" / "audit.csv")):
        if path.exists():
            lines += [f"## {title}", ""]
            body = [(r["model"], r["roi_kind"], r["metric"], _fmt_ci(r["mean"], r["ci_low"], r["ci_high"]), r["n"])
                    for r in _read_csv(path)]
            lines += _table(("Model", "ROI", "Metric", "Value", "n"), body)
    return "\n".join(lines)


def cmd_report(cfg: RunConfig) -> None:
    text = render_report(cfg.out)
    with open(cfg.out / "report.md", "w") as fh:
        fh.write(text + "\n")
    print(text)


COMMANDS = {
    "phantom": cmd_phantom,
    "extract": cmd_extract,
    "sweep": cmd_sweep,
    "rank": cmd_rank,
    "simple": cmd_simple,
    "baseline": cmd_baseline,
    "audit": cmd_audit,
    "report": cmd_report,
}
SEEDLESS = {"rank", "report"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fibrorad", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=list(COMMANDS))
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--seed", type=int, help="master seed (overrides config and RUN_SEED)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--jobs", type=int, help="worker processes; never changes results")
    ap.add_argument("--configs", help='axis filter, e.g. "contrast=NC,model=logreg|rf"')
    ap.add_argument("--experiments", type=int, help="experiments per configuration")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    env = os.environ.get("RUN_SEED")
    if env is not None:
        try:
            cfg.master_seed = int(env)
        except ValueError:
            raise ConfigError(f"RUN_SEED must be an integer, got {env!r}") from None
    overrides = {"master_seed": args.seed, "out_dir": args.out, "jobs": args.jobs,
                 "configs": args.configs, "n_experiments": args.experiments}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.command in SEEDLESS and cfg.master_seed is None:
        cfg.master_seed = 0
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except (ConfigError, VolumeFormatError) as exc:
        print(f"fibrorad {args.command}: invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"fibrorad {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
