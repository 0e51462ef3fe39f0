//! Training, evaluation, checkpointing, gradient checking and reporting.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod report;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use eval::{evaluate, predict, EvalMode, EvalOutput, GuardedHead, Prediction, SampleSummary};
pub use gradcheck::{check_gradients, gradcheck, Component, GradcheckEntry, GradcheckReport};
pub use config::{LrSchedule, OptimizerConfig, TrainConfig};
pub use loss::{prepare_items, sample_loss, total_loss, LossParts, TrainItem};
pub use optim::AdamW;
pub use report::{markdown_document, markdown_table, read_eval_report, render_overlay, write_eval_artifacts, EvalReport};
pub use train::{dataset_loss, epoch_batches, steps_per_epoch, train, StepLog, TrainOutcome};
