//! Synthetic data and experiment orchestration.

mod experiment;
mod parallel;
mod synth;

pub use experiment::{
    ablate, run, AblationCurve, AblationParameter, AblationRow, Aggregates, AttackBatch, ExperimentConfig, ExperimentReport, Lab,
    RocSummary, Scenario, TrainingSummary,
};
pub use parallel::par_map;
pub use synth::{synth_dataset, synth_image};
