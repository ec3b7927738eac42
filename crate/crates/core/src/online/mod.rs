//! On-policy fine-tuning with a clipped importance-weighted objective.

mod finetune;
mod ppo;
mod rollout;

pub use finetune::{finetune, FinetuneReport, IterationStats, ThresholdHit};
pub use ppo::{
    advantages, clipped_surrogate, compute_advantage, policy_gradient, ppo_update, surrogate,
    AdvantageEstimator, PolicyLoss, PpoConfig, UpdateStats,
};
pub use rollout::{
    collect, evaluate, rollout_env_seed, AgentTrajectory, BufferStep, CollectSpec, EvalReport,
    RolloutBuffer,
};
