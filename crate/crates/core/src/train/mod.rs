//! Adversarial inner maximization, Adam, and the min-max training loop.

mod adam;
mod config;
mod pgd;
mod run;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{EvalConfig, PgdConfig, PgdInit, ProbeConfig, TrainConfig};
pub use pgd::{pgd_maximize, AdvObjective, PgdOutcome};
pub use run::{train, train_epoch, EpochStats, TrainRun, METRICS_HEADER};
