//! Experiment harness: JSON configuration, the parallel multi-trial runner,
//! run comparison, tracking runs and the built-in validation suite.

mod compare;
mod config;
mod run;
mod track;
mod validate;

pub use compare::{
    compare_runs, Comparison, CurveRow, RunDir, W1Row, COMPARISON_CURVES_FILE, COMPARISON_W1_FILE,
};
pub use config::{DatasetSpec, ExperimentConfig, MetricsSpec, ModelSpec, ReferenceSpec};
pub use run::{
    load_trajectory, run_experiment, AlgorithmSummary, Manifest, ManifestEntry, RunReport,
    TrialResult, DATASET_FILE, FINAL_W1_FILE, MANIFEST_FILE, REFERENCE_FILE, RESOLVED_CONFIG_FILE,
    TRIALS_FILE,
};
pub use track::{run_tracking_experiment, TrackingConfig, TrackingReport};
pub use validate::{
    gradient_check, max_hessian_vector_error, relative_frobenius, run_validation, Check,
    CorruptedGradient, ValidationOptions, ValidationReport,
};

/// Environment variable overriding the output root of every command.
pub const OUTPUT_ROOT_ENV: &str = "ANLD_OUTPUT_ROOT";

/// JSON Schema of [`ExperimentConfig`] files.
pub fn experiment_schema() -> serde_json::Value {
    schemars::schema_for!(ExperimentConfig).to_value()
}

/// JSON Schema of [`TrackingConfig`] files.
pub fn tracking_schema() -> serde_json::Value {
    schemars::schema_for!(TrackingConfig).to_value()
}
