//! Experiment configuration, estimate scans and the end-to-end pipeline.

pub mod config;
pub mod harnack;
pub mod holder;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, PotentialSource, ScalarSpec};
pub use harnack::{harnack_ratio, HarnackReport};
pub use holder::{holder_scan, oscillation, HolderReport};
pub use pipeline::{run_pipeline, run_selected, PipelineReport, Stage, StageOutcome};
