use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ppo::{compute_advantage, ppo_update, PpoConfig, UpdateStats};
use super::rollout::{collect, evaluate, CollectSpec, EvalReport};
use crate::env::ScenarioDef;
use crate::error::{MadtError, Result};
use crate::model::{ActMode, Model};
use crate::numerics::{Adam, Checkpoint, Tensor};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Cumulative joint environment steps after this iteration's collection.
    pub env_steps: usize,
    /// Mean raw team return of the collected episodes.
    pub mean_return: f64,
    pub success_rate: f64,
    pub update: UpdateStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    /// Environment steps at the first collection whose mean return reached
    /// the threshold.
    pub env_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub scenario_id: String,
    pub curve: Vec<IterationStats>,
    pub steps_to_threshold: Vec<ThresholdHit>,
    pub env_steps: usize,
    pub updates: usize,
    /// A collection ran out of budget before any update happened.
    pub insufficient_budget: bool,
    /// Budget was zero; only the evaluation ran.
    pub evaluation_only: bool,
    pub final_eval: EvalReport,
    pub wall_clock_secs: f64,
}

impl FinetuneReport {
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.steps_to_threshold
            .iter()
            .find(|h| h.threshold == threshold)
            .and_then(|h| h.env_steps)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    config: PpoConfig,
    scenario_id: String,
    next_iteration: usize,
    env_steps: usize,
    updates: usize,
    curve: Vec<IterationStats>,
    hits: Vec<ThresholdHit>,
}

const PROGRESS: &str = "progress.json";

fn model_file(it: usize) -> String {
    format!("model-{it:05}.ckpt")
}

fn optim_file(it: usize) -> String {
    format!("optim-{it:05}.ckpt")
}

/// Checkpoints are written under iteration-numbered names and the progress
/// file is swapped in by rename, so an interrupted save leaves the previous
/// state intact.
fn save_state(dir: &Path, p: &Progress, model: &Model, adam: &Adam) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MadtError::io(dir, e))?;
    let it = p.next_iteration;
    model
        .to_checkpoint(json!({"state": "finetune", "iteration": it}))
        .save(&dir.join(model_file(it)))?;
    let (m, v) = adam.moments();
    let mut ck = Checkpoint::new(json!({"kind": "adam", "step": adam.steps_taken(), "lr": adam.lr}));
    for (i, (m, v)) in m.iter().zip(v).enumerate() {
        ck.push(format!("m.{i}"), Tensor::vector(m.clone()));
        ck.push(format!("v.{i}"), Tensor::vector(v.clone()));
    }
    ck.save(&dir.join(optim_file(it)))?;
    let tmp = dir.join("progress.json.tmp");
    let text = serde_json::to_string_pretty(p).expect("progress serializes");
    fs::write(&tmp, text).map_err(|e| MadtError::io(&tmp, e))?;
    let path = dir.join(PROGRESS);
    fs::rename(&tmp, &path).map_err(|e| MadtError::io(&path, e))?;
    if it > 0 {
        let _ = fs::remove_file(dir.join(model_file(it - 1)));
        let _ = fs::remove_file(dir.join(optim_file(it - 1)));
    }
    Ok(())
}

fn load_state(dir: &Path, model: &mut Model, adam: &mut Adam) -> Result<Option<Progress>> {
    let path = dir.join(PROGRESS);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| MadtError::io(&path, e))?;
    let p: Progress =
        serde_json::from_str(&text).map_err(|e| MadtError::format(&path, e.to_string()))?;
    *model = Model::load(&dir.join(model_file(p.next_iteration)))?;
    let opath = dir.join(optim_file(p.next_iteration));
    let ck = Checkpoint::load(&opath)?;
    let step = ck.header["step"]
        .as_u64()
        .ok_or_else(|| MadtError::format(&opath, "missing step"))?;
    let n = model.params().len();
    let grab = |prefix: &str| -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| {
                ck.get(&format!("{prefix}.{i}"))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| MadtError::format(&opath, format!("missing {prefix}.{i}")))
            })
            .collect()
    };
    adam.restore(step, grab("m")?, grab("v")?)?;
    Ok(Some(p))
}

/// Alternates collection, advantage computation and policy updates until the
/// environment-step budget is spent. With `state_dir`, progress is saved
/// after every iteration and an interrupted run resumes from it.
pub fn finetune(
    def: &ScenarioDef,
    model: &mut Model,
    cfg: &PpoConfig,
    state_dir: Option<&Path>,
    mut on_iteration: impl FnMut(&IterationStats),
) -> Result<FinetuneReport> {
    cfg.validate()?;
    let start = Instant::now();
    let scenario_id = def.id.clone();
    let seeds = SeedStream::new(cfg.seed);
    let mut adam = Adam::new(cfg.online_lr, model.params());
    let mut p = Progress {
        config: cfg.clone(),
        scenario_id: scenario_id.clone(),
        next_iteration: 0,
        env_steps: 0,
        updates: 0,
        curve: Vec::new(),
        hits: cfg
            .thresholds
            .iter()
            .map(|&threshold| ThresholdHit {
                threshold,
                env_steps: None,
            })
            .collect(),
    };
    if let Some(dir) = state_dir {
        if let Some(saved) = load_state(dir, model, &mut adam)? {
            if saved.config != *cfg || saved.scenario_id != scenario_id {
                return Err(MadtError::Config {
                    key: "state_dir".into(),
                    reason: format!("{} holds a run with a different configuration", dir.display()),
                });
            }
            p = saved;
        }
    }
    let mut insufficient = false;
    let all_hit = |p: &Progress| cfg.stop_at_thresholds && !p.hits.is_empty() && p.hits.iter().all(|h| h.env_steps.is_some());
    while p.env_steps < cfg.total_env_steps && !all_hit(&p) {
        let it = p.next_iteration;
        let mut buf = collect(
            def,
            model,
            &CollectSpec {
                n_episodes: cfg.buffer_size,
                mode: ActMode::Sample,
                seed: seeds.seed_indexed("rollout", it as u64),
                step_budget: Some(cfg.total_env_steps - p.env_steps),
                rtg_target: cfg.rtg_target,
            },
        )?;
        p.env_steps += buf.env_steps;
        if buf.truncated {
            insufficient = p.updates == 0;
            break;
        }
        compute_advantage(&mut buf, cfg);
        let mean_return = buf.mean_return();
        for h in &mut p.hits {
            if h.env_steps.is_none() && mean_return >= h.threshold {
                h.env_steps = Some(p.env_steps);
            }
        }
        let update = ppo_update(
            &buf,
            model,
            &mut adam,
            cfg,
            &mut seeds.rng_indexed("minibatch", it as u64),
        )?;
        p.updates += 1;
        let stats = IterationStats {
            iteration: it,
            env_steps: p.env_steps,
            mean_return,
            success_rate: buf.success_rate(),
            update,
        };
        on_iteration(&stats);
        p.curve.push(stats);
        p.next_iteration += 1;
        if let Some(dir) = state_dir {
            save_state(dir, &p, model, &adam)?;
        }
    }
    let final_eval = evaluate(
        def,
        model,
        cfg.eval_epochs,
        ActMode::Greedy,
        seeds.seed("eval"),
        cfg.rtg_target,
    )?;
    Ok(FinetuneReport {
        scenario_id,
        curve: p.curve,
        steps_to_threshold: p.hits,
        env_steps: p.env_steps,
        updates: p.updates,
        insufficient_budget: insufficient,
        evaluation_only: cfg.total_env_steps == 0,
        final_eval,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
