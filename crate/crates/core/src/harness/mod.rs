//! Discrete-timeslot simulation driver and experiment runner.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod workload;
pub mod world;

pub use config::{ExperimentConfig, Scheduler};
pub use experiment::{
    compare_schedulers, run_experiment, scale_sweep, sweep_beta, RunOutput, ScaleRow,
    SchedulerRow, SweepRow,
};
pub use metrics::{AuditReport, MetricsReport};
pub use world::{HarnessError, World};
