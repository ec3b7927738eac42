use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::grid::GridEnv;
use super::scenario::{DOWN, LEFT, NOOP, N_MOVE_ACTIONS, RIGHT, UP};
use crate::error::{MadtError, Result};
use crate::rng::Rng;

/// Behavior-policy quality grade used to label datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Poor,
    Medium,
    Good,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Poor, Tier::Medium, Tier::Good];

    /// Probability of replacing the coordinator's choice with a uniform legal action.
    pub fn noise(self) -> f64 {
        match self {
            Tier::Good => 0.0,
            Tier::Medium => 0.5,
            Tier::Poor => 0.85,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Poor => "poor",
            Tier::Medium => "medium",
            Tier::Good => "good",
        })
    }
}

impl FromStr for Tier {
    type Err = MadtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poor" => Ok(Tier::Poor),
            "medium" => Ok(Tier::Medium),
            "good" => Ok(Tier::Good),
            other => Err(MadtError::Config {
                key: "tier".into(),
                reason: format!("expected poor|medium|good, got `{other}`"),
            }),
        }
    }
}

/// Uniform draw over the legal entries of `avail`.
pub fn random_legal(avail: &[bool], rng: &mut Rng) -> Result<usize> {
    let legal: Vec<usize> = (0..avail.len()).filter(|&a| avail[a]).collect();
    if legal.is_empty() {
        return Err(MadtError::NoLegal("availability mask is empty".into()));
    }
    Ok(legal[rng.gen_range(0..legal.len())])
}

/// Shortest-path coordinator: tag the lowest-index taggable target if any;
/// otherwise head for target `live[agent mod |live|]`, closing the horizontal
/// gap before the vertical one.
pub fn coordinator_action(env: &GridEnv, agent: usize) -> usize {
    let avail = env.avail(agent);
    if let Some(tag) = (N_MOVE_ACTIONS..avail.len()).find(|&a| avail[a]) {
        return tag;
    }
    let live: Vec<usize> = (0..env.spec().n_actions - N_MOVE_ACTIONS)
        .filter(|&j| env.target_alive(j))
        .collect();
    if live.is_empty() {
        return NOOP;
    }
    let goal = env.target_cell(live[agent % live.len()]);
    let me = env.agent_cell(agent);
    let mv = if goal.0 > me.0 {
        RIGHT
    } else if goal.0 < me.0 {
        LEFT
    } else if goal.1 > me.1 {
        DOWN
    } else if goal.1 < me.1 {
        UP
    } else {
        NOOP
    };
    if avail[mv] {
        mv
    } else {
        NOOP
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedPolicy {
    pub tier: Tier,
}

impl ScriptedPolicy {
    pub fn new(tier: Tier) -> Self {
        ScriptedPolicy { tier }
    }

    /// Legal action for `agent` in the current state of `env`. The good tier
    /// consumes no randomness.
    pub fn act(&self, env: &GridEnv, agent: usize, rng: &mut Rng) -> Result<usize> {
        let noise = self.tier.noise();
        if noise > 0.0 && rng.gen::<f64>() < noise {
            return random_legal(&env.avail(agent), rng);
        }
        Ok(coordinator_action(env, agent))
    }

    pub fn joint_action(&self, env: &GridEnv, rng: &mut Rng) -> Result<Vec<usize>> {
        (0..env.spec().n_agents)
            .map(|i| self.act(env, i, rng))
            .collect()
    }
}
