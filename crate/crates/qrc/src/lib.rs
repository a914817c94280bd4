//! Experiment orchestration for `qrc-core`: configuration and presets,
//! per-seed pipelines, parameter sweeps and report files.

pub mod config;
pub mod experiment;
pub mod formats;
pub mod report;

pub use config::{preset, ExperimentConfig, Stages, SweepAxis, SweepConfig};
pub use experiment::{run_experiment, run_sweep, ExperimentReport, GroundTruth, SweepReport};
pub use report::{emit_report, Report};

/// Runs one configuration, dispatching on whether it describes a sweep.
pub fn run(cfg: &ExperimentConfig, workers: usize) -> anyhow::Result<Report> {
    Ok(if cfg.sweep.is_some() {
        Report::Sweep(run_sweep(cfg, workers)?)
    } else {
        Report::Experiment(run_experiment(cfg, workers)?)
    })
}
