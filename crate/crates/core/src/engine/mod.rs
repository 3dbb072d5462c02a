//! Training, evaluation, checkpoints and inspection.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod inspect;
pub mod model;
pub mod train;

pub use checkpoint::{Checkpoint, RngState};
pub use config::{Precision, RunConfig};
pub use evaluate::{evaluate, wald_interval, EvalOptions, EvalReport};
pub use inspect::{attention_csv, inspect_attention, match_videos, AttentionProfile, PrototypeGroup};
pub use model::{argmax_first, EpisodeClassifier, Model};
pub use train::{
    loss_curve_csv, train, train_model, train_step, write_loss_curve, EpochRecord, Optimizer, TrainOutcome,
};
