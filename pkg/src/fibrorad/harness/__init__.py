"""Experiment protocol, summaries and the downstream analyses."""

from .analysis import (
    BIOPSY_SET,
    CURATED_SETS,
    INTERSECTING_SET,
    NONBIOPSY_SET,
    AuditRecord,
    EvalSummary,
    average_roi_prediction,
    baseline_features,
    baseline_hirano,
    confounder_audit,
    rank_features,
    train_simple,
)
from .extraction import assemble_tables, extract_tables, parse_norms, patient_rows, roi_features
from .protocol import (
    AXES,
    AXIS_VALUES,
    GRID_RUNS,
    Configuration,
    ExperimentResult,
    SweepSummary,
    config_hash,
    enumerate_configs,
    experiment_seed,
    file_hash,
    filter_configs,
    grid_search,
    read_results,
    run_experiment,
    run_sweep,
    summarize,
    write_results,
    write_summary_csv,
    write_top_configs_csv,
)

__all__ = [
    "AuditRecord",
    "average_roi_prediction",
    "AXES",
    "AXIS_VALUES",
    "assemble_tables",
    "baseline_features",
    "baseline_hirano",
    "BIOPSY_SET",
    "config_hash",
    "Configuration",
    "confounder_audit",
    "CURATED_SETS",
    "enumerate_configs",
    "EvalSummary",
    "extract_tables",
    "experiment_seed",
    "ExperimentResult",
    "file_hash",
    "filter_configs",
    "GRID_RUNS",
    "grid_search",
    "INTERSECTING_SET",
    "NONBIOPSY_SET",
    "parse_norms",
    "patient_rows",
    "rank_features",
    "read_results",
    "roi_features",
    "run_experiment",
    "run_sweep",
    "summarize",
    "SweepSummary",
    "train_simple",
    "write_results",
    "write_summary_csv",
    "write_top_configs_csv",
]
