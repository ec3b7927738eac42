//! Cooperative grid scenarios with global state, per-agent partial views,
//! availability masks and a shared team reward.

mod grid;
mod scenario;
mod scripted;

pub use grid::{GridEnv, StepOutcome};
pub use scenario::{
    scenario_registry, Registry, ScenarioDef, TaskSpec, DOWN, LEFT, NOOP, N_MOVE_ACTIONS, RIGHT,
    UP,
};
pub use scripted::{coordinator_action, random_legal, ScriptedPolicy, Tier};

use crate::error::Result;

/// Instantiates and resets a registered scenario.
pub fn reset(registry: &Registry, scenario: &str, seed: u64) -> Result<(GridEnv, StepOutcome)> {
    let mut env = GridEnv::new(registry.get(scenario)?.clone())?;
    let o = env.reset(seed);
    Ok((env, o))
}
