use serde::{Deserialize, Serialize};

use crate::error::{MadtError, Result};

/// Actions shared by every scenario, in index order. Tag actions follow,
/// one per target.
pub const NOOP: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const RIGHT: usize = 4;
pub const N_MOVE_ACTIONS: usize = 5;

/// Declarative scenario layout and reward constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDef {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_targets: usize,
    pub sight_radius: usize,
    pub max_episode_len: usize,
    #[serde(default = "default_time_penalty")]
    pub time_penalty: f64,
    #[serde(default = "default_progress_coef")]
    pub progress_coef: f64,
    #[serde(default = "default_tag_reward")]
    pub tag_reward: f64,
    #[serde(default = "default_terminal_bonus")]
    pub terminal_bonus: f64,
    /// Fixed start cells `[x, y]`; random per seed when absent.
    #[serde(default)]
    pub agent_starts: Option<Vec<[usize; 2]>>,
    /// Fixed target cells `[x, y]`; random per seed when absent.
    #[serde(default)]
    pub targets: Option<Vec<[usize; 2]>>,
}

fn default_time_penalty() -> f64 {
    0.01
}
fn default_progress_coef() -> f64 {
    0.1
}
fn default_tag_reward() -> f64 {
    0.5
}
fn default_terminal_bonus() -> f64 {
    1.0
}

/// Per-scenario metadata consumed by the dataset and model layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub scenario_id: String,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub max_episode_len: usize,
    pub reward_range: [f64; 2],
    pub win_condition: String,
}

impl TaskSpec {
    pub fn reward_span(&self) -> f64 {
        self.reward_range[1] - self.reward_range[0]
    }
}

impl ScenarioDef {
    /// Parses a scenario from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let def: ScenarioDef = toml::from_str(text).map_err(|e| MadtError::Config {
            key: "scenario".into(),
            reason: e.to_string(),
        })?;
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| MadtError::Config {
            key: format!("{}.{key}", self.id),
            reason,
        };
        if self.width < 2 || self.height < 2 {
            return Err(bad("width", "grid must be at least 2×2".into()));
        }
        if self.n_agents == 0 || self.n_targets == 0 {
            return Err(bad("n_agents", "need at least one agent and one target".into()));
        }
        if self.n_agents + self.n_targets > self.width * self.height {
            return Err(bad("n_agents", "more entities than cells".into()));
        }
        if self.sight_radius == 0 {
            return Err(bad("sight_radius", "must be positive".into()));
        }
        if self.max_episode_len == 0 {
            return Err(bad("max_episode_len", "must be positive".into()));
        }
        if let Some(starts) = &self.agent_starts {
            if starts.len() != self.n_agents {
                return Err(bad("agent_starts", format!("expected {} cells", self.n_agents)));
            }
            self.check_cells("agent_starts", starts)?;
        }
        if let Some(targets) = &self.targets {
            if targets.len() != self.n_targets {
                return Err(bad("targets", format!("expected {} cells", self.n_targets)));
            }
            self.check_cells("targets", targets)?;
        }
        Ok(())
    }

    fn check_cells(&self, key: &str, cells: &[[usize; 2]]) -> Result<()> {
        for c in cells {
            if c[0] >= self.width || c[1] >= self.height {
                return Err(MadtError::Config {
                    key: format!("{}.{key}", self.id),
                    reason: format!("cell {c:?} outside {}×{} grid", self.width, self.height),
                });
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        2 + 4 * self.n_targets + 3 * (self.n_agents - 1)
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_agents + 3 * self.n_targets
    }

    pub fn n_actions(&self) -> usize {
        N_MOVE_ACTIONS + self.n_targets
    }

    /// Bounds on the per-step team reward.
    ///
    /// Per step, every live target's nearest-agent distance changes by at most
    /// one and a target can only be tagged from distance ≤ 1, so the shaping
    /// term lies in `[-n_targets, n_targets] · progress_coef`.
    pub fn reward_range(&self) -> [f64; 2] {
        let nt = self.n_targets as f64;
        let lo = -self.time_penalty - self.progress_coef * nt;
        let hi = -self.time_penalty
            + self.progress_coef * nt
            + self.tag_reward * nt
            + self.terminal_bonus;
        [lo, hi]
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            scenario_id: self.id.clone(),
            n_agents: self.n_agents,
            obs_dim: self.obs_dim(),
            state_dim: self.state_dim(),
            n_actions: self.n_actions(),
            max_episode_len: self.max_episode_len,
            reward_range: self.reward_range(),
            win_condition: "every target tagged".into(),
        }
    }
}

/// Built-in scenario family plus the default multi-task split.
#[derive(Debug, Clone)]
pub struct Registry {
    defs: Vec<ScenarioDef>,
    holdout: String,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}

fn builtin(
    id: &str,
    size: usize,
    n_agents: usize,
    n_targets: usize,
    sight: usize,
    bonus: f64,
) -> ScenarioDef {
    ScenarioDef {
        id: id.into(),
        width: size,
        height: size,
        n_agents,
        n_targets,
        sight_radius: sight,
        max_episode_len: 30,
        time_penalty: default_time_penalty(),
        progress_coef: default_progress_coef(),
        tag_reward: default_tag_reward(),
        terminal_bonus: bonus,
        agent_starts: None,
        targets: None,
    }
}

impl Registry {
    pub fn builtin() -> Self {
        Registry {
            defs: vec![
                builtin("2a_2t", 5, 2, 2, 5, 1.0),
                builtin("3a_3t", 6, 3, 3, 6, 1.5),
                builtin("2a_3t", 6, 2, 3, 6, 2.0),
                builtin("3a_2t", 5, 3, 2, 5, 1.2),
                builtin("4a_4t", 7, 4, 4, 4, 2.5),
                builtin("3a_4t", 6, 3, 4, 6, 1.8),
            ],
            holdout: "3a_4t".into(),
        }
    }

    /// Builds a registry from explicit definitions. The hold-out must be one of them.
    pub fn with_defs(defs: Vec<ScenarioDef>, holdout: &str) -> Result<Self> {
        for d in &defs {
            d.validate()?;
        }
        if !defs.iter().any(|d| d.id == holdout) {
            return Err(MadtError::Config {
                key: "holdout".into(),
                reason: format!("`{holdout}` is not among the definitions"),
            });
        }
        Ok(Registry {
            defs,
            holdout: holdout.into(),
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.defs.iter().map(|d| d.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&ScenarioDef> {
        self.defs
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| MadtError::UnknownScenario {
                id: id.into(),
                registered: self.ids(),
            })
    }

    pub fn specs(&self) -> Vec<TaskSpec> {
        self.defs.iter().map(|d| d.task_spec()).collect()
    }

    pub fn holdout(&self) -> &str {
        &self.holdout
    }

    /// Every scenario except the hold-out, in registration order.
    pub fn training_list(&self) -> Vec<String> {
        self.defs
            .iter()
            .filter(|d| d.id != self.holdout)
            .map(|d| d.id.clone())
            .collect()
    }
}

/// Registered task specs.
pub fn scenario_registry() -> Vec<TaskSpec> {
    Registry::builtin().specs()
}
