//! Data ingestion, risk evaluation and experiment orchestration.

pub mod data;
pub mod experiment;
pub mod risk;

pub use data::{
    load_dataset, parse_csv, parse_libsvm, save_csv, synth_dataset, write_csv, Dataset, DatasetFormat,
    SyntheticGenerator, SyntheticTask,
};
pub use experiment::{
    compute_rows, meta_path, read_report, run_experiment, write_report, ExperimentKind, ExperimentSettings,
    ExperimentSpec, GridPoint, ParameterGrid, ReportRow,
};
pub use risk::{approx_population_optimum, evaluate_risk, PopulationReference, DEFAULT_HOLDOUT_N};
