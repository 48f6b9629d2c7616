//! Config-driven experiment execution, result files, tradeoff curves and
//! the checklist linter behind the `prunebench` binary.

mod config;
mod curves;
mod lint;
mod run;

pub use config::{load_data, DatasetCfg, ExperimentConfig, LoadedData};
pub use curves::{
    curves, mean, ranking_at, sample_std, write_curves_csv, CurveGap, CurvePoint, Curves, XMetric, YMetric,
};
pub use lint::{lint, LintItem, LintReport, MIN_EXTREME_COMPRESSION, MIN_OPERATING_POINTS, MIN_SEEDS};
pub use run::{
    read_results_csv, run_experiment, run_experiment_with, run_grid, train_command, train_initial, write_results_csv, ExperimentOutcome,
    ResultsFile, RunDetail, RunRecord, CSV_COLUMNS, INITIAL_RUN_INDEX, RESULTS_CSV, RESULTS_JSON,
    RESULTS_SCHEMA_VERSION,
};
