//! Optimisation loop, training regimes, evaluation and budget sweeps.

mod adam;
mod hyper;
mod metrics;
pub mod strategy;
pub mod sweep;
mod trainer;

pub use adam::Adam;
pub use hyper::{AdamConfig, Hyperparams};
pub use metrics::{evaluate, Evaluation, JsonlWriter, MetricsRecord, NoObserver, TrainObserver};
pub use strategy::{StrategyRegistry, TrainingStrategy};
pub use trainer::{train, StepReport, TrainOutcome, Trainer};
pub use sweep::{sweep, SweepGrid, SweepReport, SweepRow, SweepSummary, DEFAULT_BUDGETS};
