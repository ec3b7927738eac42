//! Supervised pre-training of the shared policy from static datasets.

mod loss;
mod train;
mod window;

pub use loss::{ce_loss, target_log_probs, valid_weights, value_loss};
pub use train::{action_agreement, corpus_windows, pretrain, EpochStats, OfflineConfig, TrainReport};
pub use window::{chunk_ranges, discounted_returns, target_batch, windows, TargetBatch, Window};
