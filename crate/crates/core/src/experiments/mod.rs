//! Metrics, penalty selection and the experiment driver.

pub mod bic;
pub mod config;
pub mod metrics;
pub mod realdata;
pub mod report;
pub mod runner;
pub mod sensitivity;

pub use bic::{bic_lad, bic_lasso, bic_select, BicSelection};
pub use config::{BaselineSettings, DataSpec, ExperimentConfig, TopologySpec};
pub use metrics::{l2_error, prediction_metrics, support_metrics, SupportScores, ZERO_TOL};
pub use report::{Aggregate, ExperimentReport, MetricRow, TraceRow};
pub use runner::{repetition_data, run_experiment, run_methods, RunOutput};
