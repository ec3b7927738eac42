use super::record::{Dataset, Episode, TimestepRecord, Trajectory};
use super::stats::manifest_for;
use crate::env::{GridEnv, Registry, ScriptedPolicy, Tier};
use crate::error::Result;
use crate::rng::{derive_seed, rng_from_seed};

/// Rolls out one episode of `policy`, recording every agent-timestep.
pub fn record_episode(
    env: &mut GridEnv,
    policy: ScriptedPolicy,
    env_seed: u64,
    policy_seed: u64,
    episode: usize,
) -> Result<Episode> {
    let mut rng = rng_from_seed(policy_seed);
    let n_agents = env.spec().n_agents;
    let id = env.spec().scenario_id.clone();
    let mut trajectories: Vec<Trajectory> = (0..n_agents)
        .map(|agent_id| Trajectory {
            scenario_id: id.clone(),
            episode,
            agent_id,
            records: Vec::new(),
        })
        .collect();
    let mut o = env.reset(env_seed);
    while !o.done {
        let actions = policy.joint_action(env, &mut rng)?;
        let next = env.step(&actions)?;
        for (i, traj) in trajectories.iter_mut().enumerate() {
            traj.records.push(TimestepRecord {
                state: o.state.clone(),
                obs: o.obs[i].clone(),
                action: actions[i],
                reward: next.reward,
                done: next.done,
                avail: o.avail[i].clone(),
            });
        }
        o = next;
    }
    Ok(Episode { trajectories })
}

/// Environment seed of episode `k` in a dataset generated from `seed`.
pub fn episode_env_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, "episode-env", k as u64)
}

pub fn episode_policy_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, "episode-policy", k as u64)
}

pub fn generate(
    registry: &Registry,
    scenario: &str,
    tier: Tier,
    n_episodes: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut env = GridEnv::new(registry.get(scenario)?.clone())?;
    let policy = ScriptedPolicy::new(tier);
    let episodes = (0..n_episodes)
        .map(|k| {
            record_episode(
                &mut env,
                policy,
                episode_env_seed(seed, k),
                episode_policy_seed(seed, k),
                k,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let task = env.spec().clone();
    Ok(Dataset {
        manifest: manifest_for(&task, tier, seed, &episodes),
        task,
        episodes,
    })
}
