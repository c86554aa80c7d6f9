//! Reproducible experiment harness.
//!
//! An [`ExperimentSpec`] (TOML, unknown keys rejected) names the data source,
//! quantile levels, subsample sizes, methods and smoothing. [`run_experiment`]
//! writes `metrics.csv`, `beta_curves.csv`, `timings.csv`, optional `plans/`
//! and `manifest.toml`; only the manifest carries a timestamp.

pub mod bench;
pub mod config;
pub mod data;
pub mod run;

pub use bench::{bench, summarize, TimingRow, TimingSummary};
pub use config::{
    load_simulation_config, DataSpec, ExperimentSpec, GacvScope, GridSpec, LambdaSpec, Method,
    Mode, SimulationSpec, EVAL_POINTS,
};
pub use data::{load_data, ExperimentData};
pub use run::{
    rep_seed, run_experiment, run_on_data, shared_lambda, write_outputs, CellFailure, CurveRow,
    ExperimentOutput, MetricRow,
};
