//! Multi-task optimization: Adam, clipping, plateau scheduling, early
//! stopping, checkpointed training and multi-seed aggregation.

mod config;
mod multi;
mod optim;
mod pretrained;
mod run;
mod schedule;

pub use config::{ConfigFile, TrainConfig, ValidationObjective};
pub use multi::{multi_seed_run, MeanStd, MultiSeedReport, SeedRun};
pub use optim::{clip_gradients, multi_task_loss, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use pretrained::{apply_pretrained, load_pretrained};
pub use run::{
    train, validation_loss, LogEntry, ModelArtifact, StepReport, StopReason, TrainOutcome, TrainPaths,
    TrainState, Trainer, ValidationReport, MODEL_FORMAT,
};
pub use schedule::{
    checkpoints_since_best, early_stop, latest_improved, lr_on_plateau, running_best, DEFAULT_MIN_LR,
    PLATEAU_TOLERANCE,
};
