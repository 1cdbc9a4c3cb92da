//! Config-driven experiments: parsing, execution, baselines, reports, and
//! mask import/export.

pub mod config;
pub mod demo;
pub mod maskio;
pub mod report;
pub mod runner;

pub use config::{parse_config, BaselineKind, DatasetKind, ExperimentConfig, ModelKind};
pub use demo::{sample_demo, DemoRow};
pub use maskio::{export_mask, import_mask};
pub use report::{read_report, summarize, write_report, write_summary, ReportRow, CSV_HEADER};
pub use runner::{run_experiment, ExperimentArtifacts, DATA_ENV};
