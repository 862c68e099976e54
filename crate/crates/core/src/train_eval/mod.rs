//! Training orchestration, detached inference, checkpoints and the
//! full/corner evaluation protocol.

mod checkpoint;
mod config;
mod eval;
mod model;
pub mod report;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint_info, save_checkpoint, CheckpointInfo, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Preset, TrainConfig};
pub use eval::{evaluate, image_metrics, EvalReport, ImageMetrics};
pub use model::{infer, Model, Prepared};
pub use train::{check_pairs, parse_trace_csv, trace_csv, train, train_model, StepLog, TrainOutcome};

#[cfg(test)]
mod tests;
