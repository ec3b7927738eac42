//! The shared causal-transformer policy with action and value heads.

mod config;
mod incremental;
mod io;
mod network;
mod policy;

pub use config::{positional_encoding, ModelConfig};
pub use incremental::{Incremental, StepOutput};
pub use io::card_path;
pub use network::{Bound, ContextBatch, ContextStep, Forward, Model};
pub use policy::{masked_log_prob, masked_probs, select_action, ActMode};
