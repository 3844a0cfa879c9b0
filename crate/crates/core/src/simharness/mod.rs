//! Datasets, synthetic complaints and experiment orchestration.

pub mod dataset;
pub mod sim;
pub mod synth;

pub use dataset::{calls_by_day, count_calls, ingest_csv, ComplaintRecord, DatasetError, Ingested};
pub use sim::{
    run_day, run_experiment, run_month, write_metrics, DayOutcome, Experiment, ExperimentConfig, MetricsRow,
    PipelineConfig, Population, RunDay, Summary, WireMode,
};
pub use synth::{generate_synthetic, Campaign, SynthSpec};
