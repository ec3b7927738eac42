//! Trajectory datasets: generation from scripted behavior policies, the
//! binary file format, summary statistics and multi-task unification.

mod generate;
mod io;
mod record;
mod stats;
mod unify;

pub use generate::{episode_env_seed, episode_policy_seed, generate, record_episode};
pub use io::{
    dataset_files, decode, encode, file_name, read_dataset, read_dir, write_dataset, DATA_MAGIC,
};
pub use record::{Dataset, DatasetManifest, Episode, TimestepRecord, Trajectory, SCHEMA_VERSION};
pub use stats::{format_table, manifest_for, stats, summarize, Summary};
pub use unify::{
    merge, pad_features, scale_rewards, unify_actions, unify_dataset, RewardScale,
    UnifiedDataset, UnifiedRecord, UnifiedTrajectory, UniversalDims,
};
