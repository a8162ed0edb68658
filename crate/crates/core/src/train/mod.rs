//! Loss, optimizer, the epoch loop, and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod fit;
pub mod loss;
pub mod optim;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{parse_key_values, ClipMode, DecayMode, TrainConfig, TRAIN_KEYS};
pub use fit::{evaluate, fit, fit_with, EpochRecord, Evaluation, FitOptions, EPOCH_CSV_HEADER};
pub use loss::{bce_loss, bce_loss_and_grad, PROB_CLAMP};
pub use optim::{adam_step, adam_update, clip_gradients, clip_norm, clip_value, AdamState};
