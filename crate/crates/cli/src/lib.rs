//! Experiment orchestration: TOML experiment configs, the
//! simulate → infer → recover → score pipeline, parameter sweeps, and
//! CSV result emission.

pub mod config;
pub mod runner;

pub use config::{AttackKind, CorpusSource, ExperimentConfig, ScheduleConfig};
pub use runner::{aggregate, run_experiment, sweep, ResultRow};
