//! Dataset ingestion, experiment orchestration and report emission.

pub mod config;
pub mod dataset;
pub mod output;
pub mod report;
pub mod run;

pub use config::{BackendKind, ConfigError, Mode, RunConfig, TraceLevel};
pub use dataset::{load_dataset, parse_dataset, DatasetError};
pub use output::{write_analysis_csvs, OutputError};
pub use report::{render_text, EvalReport, PropertyAggregate};
pub use run::{ablate, run, sweep_alpha, RunError};
