// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment plumbing: configuration, metrics, sweeps and report files.

pub mod akd;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod sweep;

pub use akd::{run_akd_experiment, spearman, AkdRow, AkdTable};
pub use config::{config_hash, AkdExperimentConfig, ArchConfig, ExperimentConfig, SweepConfig};
pub use experiment::{base_fact_recall, recall_gate, train_from_config, Experiment, RecallReport};
pub use metrics::{
    eval_efficacy, eval_paraphrase, eval_specificity, evaluate_batch, judge_completion, CompletionFlags, MetricFlags,
    MetricResult, RecordFlags,
};
pub use report::{emit_report, read_report, Manifest, Report, ReportFormat};
pub use sweep::{run_sweep, BatchResult, SweepCell, SweepMode, SweepPlan, SweepResult};
