//! Multi-scenario unification: zero-padded features, action spaces widened by
//! prefix with padding slots unavailable, per-scenario reward scaling and
//! agent-ID tagging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::{Dataset, TimestepRecord};
use crate::env::TaskSpec;
use crate::error::{MadtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniversalDims {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub max_agents: usize,
}

impl UniversalDims {
    /// Smallest dims that fit every spec.
    pub fn covering<'a>(specs: impl IntoIterator<Item = &'a TaskSpec>) -> Self {
        specs.into_iter().fold(
            UniversalDims {
                state_dim: 0,
                obs_dim: 0,
                n_actions: 0,
                max_agents: 0,
            },
            |d, s| UniversalDims {
                state_dim: d.state_dim.max(s.state_dim),
                obs_dim: d.obs_dim.max(s.obs_dim),
                n_actions: d.n_actions.max(s.n_actions),
                max_agents: d.max_agents.max(s.n_agents),
            },
        )
    }

    pub fn check(&self, spec: &TaskSpec) -> Result<()> {
        let over = |what: &str, have: usize, cap: usize| MadtError::Unification {
            scenario: spec.scenario_id.clone(),
            reason: format!("{what} {have} exceeds universal {cap}"),
        };
        if spec.state_dim > self.state_dim {
            return Err(over("state_dim", spec.state_dim, self.state_dim));
        }
        if spec.obs_dim > self.obs_dim {
            return Err(over("obs_dim", spec.obs_dim, self.obs_dim));
        }
        if spec.n_actions > self.n_actions {
            return Err(over("n_actions", spec.n_actions, self.n_actions));
        }
        if spec.n_agents > self.max_agents {
            return Err(over("n_agents", spec.n_agents, self.max_agents));
        }
        Ok(())
    }
}

/// `v` followed by zeros up to `target_dim`.
pub fn pad_features(v: &[f64], target_dim: usize, scenario: &str) -> Result<Vec<f64>> {
    if v.len() > target_dim {
        return Err(MadtError::Unification {
            scenario: scenario.into(),
            reason: format!("feature length {} exceeds target {target_dim}", v.len()),
        });
    }
    let mut out = Vec::with_capacity(target_dim);
    out.extend_from_slice(v);
    out.resize(target_dim, 0.0);
    Ok(out)
}

/// Widens `mask` to `target_n` with unavailable padding slots. Scenario
/// actions occupy a shared prefix, so the index itself is unchanged.
pub fn unify_actions(
    mask: &[bool],
    action: usize,
    target_n: usize,
    scenario: &str,
) -> Result<(Vec<bool>, usize)> {
    if action >= target_n {
        return Err(MadtError::DataIntegrity(format!(
            "{scenario}: action {action} outside universal action space of {target_n}"
        )));
    }
    if mask.len() > target_n {
        return Err(MadtError::Unification {
            scenario: scenario.into(),
            reason: format!("{} actions exceed universal {target_n}", mask.len()),
        });
    }
    if action >= mask.len() || !mask[action] {
        return Err(MadtError::DataIntegrity(format!(
            "{scenario}: action {action} is not available under its mask"
        )));
    }
    let mut out = mask.to_vec();
    out.resize(target_n, false);
    Ok((out, action))
}

/// Affine map of a scenario's declared per-step reward range onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScale {
    pub min: f64,
    pub max: f64,
}

impl RewardScale {
    pub fn from_spec(spec: &TaskSpec) -> Result<Self> {
        let [min, max] = spec.reward_range;
        if !(max > min) {
            return Err(MadtError::Unification {
                scenario: spec.scenario_id.clone(),
                reason: format!("degenerate reward range [{min}, {max}]"),
            });
        }
        Ok(RewardScale { min, max })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn scale(&self, r: f64) -> f64 {
        (r - self.min) / self.span()
    }

    pub fn unscale(&self, r: f64) -> f64 {
        r * self.span() + self.min
    }
}

pub fn scale_rewards(records: &[TimestepRecord], spec: &TaskSpec) -> Result<Vec<f64>> {
    let s = RewardScale::from_spec(spec)?;
    Ok(records.iter().map(|r| s.scale(r.reward)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedRecord {
    pub state: Vec<f64>,
    pub obs: Vec<f64>,
    pub agent_id: usize,
    pub avail: Vec<bool>,
    pub action: usize,
    /// Scaled into [0, 1].
    pub reward: f64,
    pub raw_reward: f64,
    pub done: bool,
    /// Steps since the start of the record's episode.
    pub timestep: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedTrajectory {
    pub source: String,
    pub scenario_id: String,
    pub agent_id: usize,
    pub records: Vec<UnifiedRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedDataset {
    pub dims: UniversalDims,
    pub specs: Vec<TaskSpec>,
    pub reward_scales: BTreeMap<String, RewardScale>,
    /// Scenario action index → universal action index.
    pub action_maps: BTreeMap<String, Vec<usize>>,
    pub trajectories: Vec<UnifiedTrajectory>,
}

impl UnifiedDataset {
    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.records.len()).sum()
    }

    pub fn spec(&self, scenario: &str) -> Option<&TaskSpec> {
        self.specs.iter().find(|s| s.scenario_id == scenario)
    }

    /// Checks every structural invariant over the whole corpus.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        for traj in &self.trajectories {
            let spec = self.spec(&traj.scenario_id).ok_or_else(|| {
                MadtError::DataIntegrity(format!("{} has no task spec", traj.source))
            })?;
            for (t, r) in traj.records.iter().enumerate() {
                let at = || format!("{} t={t}", traj.source);
                if r.state.len() != d.state_dim || r.obs.len() != d.obs_dim {
                    return Err(MadtError::DataIntegrity(format!("{}: unpadded features", at())));
                }
                if r.avail.len() != d.n_actions {
                    return Err(MadtError::DataIntegrity(format!("{}: mask not widened", at())));
                }
                if r.avail[spec.n_actions..].iter().any(|&a| a) {
                    return Err(MadtError::DataIntegrity(format!(
                        "{}: padding action marked available",
                        at()
                    )));
                }
                if r.action >= spec.n_actions || !r.avail[r.action] {
                    return Err(MadtError::DataIntegrity(format!(
                        "{}: target action {} is illegal",
                        at(),
                        r.action
                    )));
                }
                if !(0.0..=1.0).contains(&r.reward) {
                    return Err(MadtError::DataIntegrity(format!(
                        "{}: scaled reward {} outside [0, 1]",
                        at(),
                        r.reward
                    )));
                }
                if r.agent_id >= d.max_agents {
                    return Err(MadtError::DataIntegrity(format!("{}: agent id overflow", at())));
                }
            }
        }
        Ok(())
    }
}

/// Unifies the first `max_episodes` episodes of one dataset.
pub fn unify_dataset(
    ds: &Dataset,
    dims: &UniversalDims,
    max_episodes: Option<usize>,
) -> Result<Vec<UnifiedTrajectory>> {
    dims.check(&ds.task)?;
    let scale = RewardScale::from_spec(&ds.task)?;
    let sid = &ds.task.scenario_id;
    let take = max_episodes.unwrap_or(ds.episodes.len());
    let mut out = Vec::new();
    for ep in ds.episodes.iter().take(take) {
        for traj in &ep.trajectories {
            let mut records = Vec::with_capacity(traj.len());
            let mut timestep = 0;
            for r in &traj.records {
                let (avail, action) = unify_actions(&r.avail, r.action, dims.n_actions, sid)
                    .map_err(|e| match e {
                        MadtError::DataIntegrity(m) => {
                            MadtError::DataIntegrity(format!("{} t={timestep}: {m}", traj.source()))
                        }
                        other => other,
                    })?;
                records.push(UnifiedRecord {
                    state: pad_features(&r.state, dims.state_dim, sid)?,
                    obs: pad_features(&r.obs, dims.obs_dim, sid)?,
                    agent_id: traj.agent_id,
                    avail,
                    action,
                    reward: scale.scale(r.reward),
                    raw_reward: r.reward,
                    done: r.done,
                    timestep,
                });
                timestep = if r.done { 0 } else { timestep + 1 };
            }
            out.push(UnifiedTrajectory {
                source: traj.source(),
                scenario_id: sid.clone(),
                agent_id: traj.agent_id,
                records,
            });
        }
    }
    Ok(out)
}

/// Merges datasets into one corpus. `episode_counts[i]`, when given, caps the
/// episodes taken from `datasets[i]`.
pub fn merge(
    datasets: &[Dataset],
    dims: UniversalDims,
    episode_counts: Option<&[usize]>,
) -> Result<UnifiedDataset> {
    if let Some(c) = episode_counts {
        if c.len() != datasets.len() {
            return Err(MadtError::Config {
                key: "offline_episode_num".into(),
                reason: format!("{} counts for {} datasets", c.len(), datasets.len()),
            });
        }
    }
    let mut specs: Vec<TaskSpec> = Vec::new();
    let mut reward_scales = BTreeMap::new();
    let mut action_maps = BTreeMap::new();
    let mut trajectories = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        let sid = ds.task.scenario_id.clone();
        if !specs.iter().any(|s| s.scenario_id == sid) {
            specs.push(ds.task.clone());
        }
        reward_scales.insert(sid.clone(), RewardScale::from_spec(&ds.task)?);
        action_maps.insert(sid, (0..ds.task.n_actions).collect());
        trajectories.extend(unify_dataset(ds, &dims, episode_counts.map(|c| c[i]))?);
    }
    Ok(UnifiedDataset {
        dims,
        specs,
        reward_scales,
        action_maps,
        trajectories,
    })
}
