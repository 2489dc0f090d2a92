//! Multitask training that balances tasks through probe updates.
//!
//! The crate layers up from a small reverse-mode autodiff engine (`tensor`,
//! `graph`) over dense f64 tensors, through standard layers and SGD
//! (`layers`), to multitask trainers (`trainer`) whose distinguishing move is
//! a temporary single-gradient-step update of the shared trunk per task: the
//! gradients taken after those probe updates rebalance how fast each task
//! trains. Datasets (`data`), closed-form quadratic task sets (`quadratic`),
//! run telemetry (`metrics`) and the experiment runner (`run`) sit on top.
//!
//! Everything is deterministic under a fixed seed: same config, same bytes
//! out.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod objective;
mod ops;
pub mod quadratic;
pub mod run;
pub mod tensor;
#[cfg(test)]
pub(crate) mod testutil;
pub mod trainer;

pub use config::{DatasetSpec, RunConfig, SourceSpec};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use layers::{sgd_step, Layer, Sequential};
pub use metrics::{
    evaluate, validation_objective, EarlyStopState, EvalReport, LossRatioTrace, MetricsWriter,
    StopDecision,
};
pub use model::{LossKind, MultitaskModel};
pub use objective::{JointPass, MultitaskObjective, TaskPass};
pub use quadratic::QuadraticTaskSet;
pub use run::{run_train, RunSummary};
pub use tensor::{zero_grads, Tensor};
pub use trainer::{
    ordinary_step, single_step_update, split_only_step, train_step, ParamSnapshot, StepOutcome,
    TrainerConfig, TrainerKind,
};
