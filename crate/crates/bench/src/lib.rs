//! Experiment protocols and metrics.

pub mod config;
pub mod metrics;
pub mod output;
pub mod protocols;

pub use config::{AssistantKind, ConfigError, ExperimentConfig, Protocol};
pub use metrics::{AggregateRow, MetricRow};
pub use protocols::{run_experiment, Bundle};
