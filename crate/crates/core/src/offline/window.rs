use std::ops::Range;

use crate::dataset::UnifiedTrajectory;
use crate::error::{MadtError, Result};
use crate::model::{ContextBatch, ContextStep, ModelConfig};

/// Splits a record sequence into windows of at most `c` positions. A window
/// never spans a `done`; each episode segment is cut from its own start.
pub fn chunk_ranges(dones: &[bool], c: usize) -> Vec<Range<usize>> {
    assert!(c >= 1, "context length must be positive");
    let mut out = Vec::new();
    let mut seg_start = 0;
    for (i, &d) in dones.iter().enumerate() {
        let end = i + 1;
        if d || end == dones.len() {
            let mut s = seg_start;
            while s < end {
                let e = (s + c).min(end);
                out.push(s..e);
                s = e;
            }
            seg_start = end;
        }
    }
    out
}

/// Discounted return-to-go inside each episode segment.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        if dones[i] {
            acc = 0.0;
        }
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// One training context with its supervision targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub source: String,
    /// Index of the first position within the source trajectory.
    pub offset: usize,
    pub steps: Vec<ContextStep>,
    pub actions: Vec<usize>,
    /// Critic targets.
    pub returns: Vec<f64>,
}

/// Cuts a unified trajectory into windows. Rewards enter the critic target
/// and the optional return-to-go feature divided by `reward_span`.
pub fn windows(
    traj: &UnifiedTrajectory,
    cfg: &ModelConfig,
    reward_span: f64,
    gamma: f64,
) -> Result<Vec<Window>> {
    let dones: Vec<bool> = traj.records.iter().map(|r| r.done).collect();
    let rewards: Vec<f64> = traj.records.iter().map(|r| r.raw_reward / reward_span).collect();
    let returns = discounted_returns(&rewards, &dones, gamma);
    let rtg = discounted_returns(&rewards, &dones, 1.0);
    chunk_ranges(&dones, cfg.context_length)
        .into_iter()
        .map(|range| {
            let mut steps = Vec::with_capacity(range.len());
            for i in range.clone() {
                let r = &traj.records[i];
                if r.action >= r.avail.len() || !r.avail[r.action] {
                    return Err(MadtError::DataIntegrity(format!(
                        "{} t={}: target action {} is unavailable",
                        traj.source, r.timestep, r.action
                    )));
                }
                steps.push(ContextStep {
                    token: cfg.token(&r.state, &r.obs, r.agent_id, Some(rtg[i]))?,
                    timestep: r.timestep,
                    avail: r.avail.clone(),
                });
            }
            Ok(Window {
                source: traj.source.clone(),
                offset: range.start,
                actions: traj.records[range.clone()].iter().map(|r| r.action).collect(),
                returns: returns[range].to_vec(),
                steps,
            })
        })
        .collect()
}

/// Batch plus per-position targets, padded alongside the batch.
pub struct TargetBatch {
    pub batch: ContextBatch,
    pub actions: Vec<usize>,
    pub returns: Vec<f64>,
}

pub fn target_batch(ws: &[&Window], cfg: &ModelConfig) -> Result<TargetBatch> {
    let rows: Vec<&[ContextStep]> = ws.iter().map(|w| w.steps.as_slice()).collect();
    let batch = ContextBatch::from_rows(&rows, cfg.token_dim(), cfg.n_actions)?;
    let n = batch.batch * batch.len;
    let mut actions = vec![0; n];
    let mut returns = vec![0.0; n];
    for (r, w) in ws.iter().enumerate() {
        let base = r * batch.len;
        actions[base..base + w.actions.len()].copy_from_slice(&w.actions);
        returns[base..base + w.returns.len()].copy_from_slice(&w.returns);
    }
    Ok(TargetBatch {
        batch,
        actions,
        returns,
    })
}
