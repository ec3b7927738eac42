use serde::{Deserialize, Serialize};

use crate::env::{TaskSpec, Tier};

pub const SCHEMA_VERSION: u32 = 1;

/// One agent-timestep `(s, o, a, r, done, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepRecord {
    pub state: Vec<f64>,
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub avail: Vec<bool>,
}

/// One agent's records for one episode, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scenario_id: String,
    pub episode: usize,
    pub agent_id: usize,
    pub records: Vec<TimestepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn source(&self) -> String {
        format!("{}/ep{}/agent{}", self.scenario_id, self.episode, self.agent_id)
    }
}

/// All agents' trajectories of one episode; they share states and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectories: Vec<Trajectory>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Team return: the shared reward summed over time.
    pub fn team_return(&self) -> f64 {
        self.trajectories
            .first()
            .map_or(0.0, |t| t.records.iter().map(|r| r.reward).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenario_id: String,
    pub tier: Tier,
    pub n_episodes: usize,
    /// Agent-timesteps over all trajectories.
    pub n_samples: usize,
    /// Mean of per-episode team returns.
    pub reward_mean: f64,
    /// Population standard deviation of per-episode team returns.
    pub reward_std: f64,
    pub generator_seed: u64,
    pub schema_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub task: TaskSpec,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.episodes.iter().flat_map(|e| e.trajectories.iter())
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.team_return()).collect()
    }
}
