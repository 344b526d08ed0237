//! Training, prediction, checkpointing and ablation around [`crate::model::Model`].

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod early_stop;
pub mod predict;
pub mod schedule;
pub mod sgd;
pub mod synth;
pub mod train;

pub use config::{Overrides, TrainConfig};
pub use early_stop::{should_stop, EvalHistory, StopReference};
pub use train::{train, train_dirs, TrainOutcome, TrainRun};
