//! Experiment orchestration for the ITSA laboratory: configuration, run
//! dispatch, metrics files, checkpoints, disparity images and summary plots.

pub mod checkpoint;
pub mod config;
mod error;
pub mod plots;
pub mod records;
pub mod run;
pub mod visual;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{parse_config, ConfigError, ExperimentConfig, Value};
pub use error::{HarnessError, Result};
pub use plots::{aggregate, emit_plots, Aggregate, PlotOutput};
pub use records::{read_metrics_csv, write_metrics_csv, MetricsRecord, CSV_HEADER};
pub use run::{apply_overrides, run_experiment, worker_threads, Overrides, RunReport, SeedRun, Study};
