//! Training loop: the student/teacher/discriminator step, EMA, checkpoints
//! and the epoch driver.

mod checkpoint;
mod config;
mod ema;
mod fit;
mod inference;
mod step;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AblationLevel, DiscInput, InferenceNet, ModelConfig, TrainerConfig};
pub use ema::{ema_decay, ema_update, lambda_cons, param_hash};
pub use fit::{fit, EpochSummary, FitData, FitOptions, FitReport, RunSummary, StepRecord, BEST_CHECKPOINT, LAST_CHECKPOINT, RUN_SUMMARY, STEP_LOG};
pub use inference::{predict_image, Segmenter};
pub use step::Trainer;
