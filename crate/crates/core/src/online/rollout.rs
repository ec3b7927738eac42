//! Lockstep rollout collection over a batch of environments.

use serde::{Deserialize, Serialize};

use crate::dataset::pad_features;
use crate::env::{GridEnv, ScenarioDef, StepOutcome};
use crate::error::{MadtError, Result};
use crate::model::{masked_log_prob, select_action, ActMode, Incremental, Model};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct BufferStep {
    pub token: Vec<f64>,
    pub timestep: usize,
    /// Availability widened to the model's action slots.
    pub avail: Vec<bool>,
    pub action: usize,
    /// Behavior-policy log-probability of `action`.
    pub log_prob: f64,
    pub value: f64,
    /// Team reward divided by the scenario's reward span.
    pub reward: f64,
    pub done: bool,
    pub ret: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory {
    pub episode: usize,
    pub agent_id: usize,
    pub steps: Vec<BufferStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub trajectories: Vec<AgentTrajectory>,
    /// Raw team returns of completed episodes.
    pub episode_returns: Vec<f64>,
    pub episode_wins: Vec<bool>,
    /// Joint environment steps taken.
    pub env_steps: usize,
    /// The step budget ran out before every episode finished.
    pub truncated: bool,
}

impl RolloutBuffer {
    pub fn n_episodes(&self) -> usize {
        self.episode_returns.len()
    }

    pub fn mean_return(&self) -> f64 {
        mean(&self.episode_returns)
    }

    pub fn success_rate(&self) -> f64 {
        let n = self.episode_wins.len();
        if n == 0 {
            0.0
        } else {
            self.episode_wins.iter().filter(|&&w| w).count() as f64 / n as f64
        }
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectSpec {
    pub n_episodes: usize,
    pub mode: ActMode,
    pub seed: u64,
    /// Maximum joint environment steps; `None` is unlimited.
    pub step_budget: Option<usize>,
    /// Initial return-to-go feature when the model uses one.
    pub rtg_target: f64,
}

/// Environment seed of episode `k` in a collection seeded with `seed`.
pub fn rollout_env_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, "rollout-env", k as u64)
}

fn widen(avail: &[bool], n: usize, scenario: &str) -> Result<Vec<bool>> {
    if avail.len() > n {
        return Err(MadtError::Unification {
            scenario: scenario.into(),
            reason: format!("{} actions exceed the model's {n}", avail.len()),
        });
    }
    let mut out = avail.to_vec();
    out.resize(n, false);
    Ok(out)
}

/// Runs `spec.n_episodes` episodes in lockstep, each agent acting on its own
/// context window through the shared model.
pub fn collect(def: &ScenarioDef, model: &Model, spec: &CollectSpec) -> Result<RolloutBuffer> {
    let cfg = &model.config;
    let template = GridEnv::new(def.clone())?;
    let task = template.spec().clone();
    cfg.dims().check(&task)?;
    let span = task.reward_span();
    let na = task.n_agents;
    let sid = &task.scenario_id;

    let mut envs: Vec<GridEnv> = Vec::with_capacity(spec.n_episodes);
    let mut last: Vec<StepOutcome> = Vec::with_capacity(spec.n_episodes);
    for k in 0..spec.n_episodes {
        let mut env = template.clone();
        last.push(env.reset(rollout_env_seed(spec.seed, k)));
        envs.push(env);
    }
    let mut rng = rng_from_seed(derive_seed(spec.seed, "rollout-actions", 0));
    let mut dec = Incremental::new(model, spec.n_episodes * na);
    let mut trajectories: Vec<AgentTrajectory> = (0..spec.n_episodes * na)
        .map(|r| AgentTrajectory {
            episode: r / na,
            agent_id: r % na,
            steps: Vec::new(),
        })
        .collect();
    let mut active = vec![true; spec.n_episodes];
    let mut ep_return = vec![0.0; spec.n_episodes];
    let mut rtg = vec![spec.rtg_target; spec.n_episodes];
    let mut buf = RolloutBuffer {
        trajectories: Vec::new(),
        episode_returns: Vec::new(),
        episode_wins: Vec::new(),
        env_steps: 0,
        truncated: false,
    };
    let mut finished: Vec<Option<(f64, bool)>> = vec![None; spec.n_episodes];

    'outer: while active.iter().any(|&a| a) {
        for k in 0..spec.n_episodes {
            if !active[k] {
                continue;
            }
            if spec.step_budget.is_some_and(|b| buf.env_steps >= b) {
                buf.truncated = true;
                break 'outer;
            }
            let t = envs[k].timestep();
            let o = &last[k];
            let state = pad_features(&o.state, cfg.state_dim, sid)?;
            let mut actions = Vec::with_capacity(na);
            for i in 0..na {
                let row = k * na + i;
                if t % cfg.context_length == 0 {
                    dec.reset(row);
                }
                let obs = pad_features(&o.obs[i], cfg.obs_dim, sid)?;
                let token = cfg.token(&state, &obs, i, Some(rtg[k]))?;
                let avail = widen(&o.avail[i], cfg.n_actions, sid)?;
                let out = dec.step(row, &token, t)?;
                let a = select_action(&out.logits, &avail, spec.mode, &mut rng)?;
                let log_prob = masked_log_prob(&out.logits, &avail, a)?;
                actions.push(a);
                trajectories[row].steps.push(BufferStep {
                    token,
                    timestep: t,
                    avail,
                    action: a,
                    log_prob,
                    value: out.value,
                    reward: 0.0,
                    done: false,
                    ret: 0.0,
                    advantage: 0.0,
                });
            }
            let next = envs[k].step(&actions)?;
            buf.env_steps += 1;
            ep_return[k] += next.reward;
            rtg[k] -= next.reward / span;
            let forced = envs[k].timestep() >= cfg.max_timestep;
            let done = next.done || forced;
            for i in 0..na {
                let s = trajectories[k * na + i].steps.last_mut().expect("step pushed above");
                s.reward = next.reward / span;
                s.done = done;
            }
            if done {
                active[k] = false;
                finished[k] = Some((ep_return[k], next.won));
            }
            last[k] = next;
        }
    }
    for f in finished.into_iter().flatten() {
        buf.episode_returns.push(f.0);
        buf.episode_wins.push(f.1);
    }
    buf.trajectories = trajectories;
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub returns: Vec<f64>,
}

/// Greedy (or sampled) evaluation over `episodes` fresh episodes.
pub fn evaluate(
    def: &ScenarioDef,
    model: &Model,
    episodes: usize,
    mode: ActMode,
    seed: u64,
    rtg_target: f64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(MadtError::Contract("evaluation needs at least one episode".into()));
    }
    let buf = collect(
        def,
        model,
        &CollectSpec {
            n_episodes: episodes,
            mode,
            seed,
            step_budget: None,
            rtg_target,
        },
    )?;
    Ok(EvalReport {
        episodes,
        mean_return: buf.mean_return(),
        success_rate: buf.success_rate(),
        returns: buf.episode_returns,
    })
}
