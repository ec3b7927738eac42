use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{ce_loss, value_loss};
use super::window::{target_batch, windows, Window};
use crate::dataset::UnifiedDataset;
use crate::error::{MadtError, Result};
use crate::model::{select_action, ActMode, Model};
use crate::numerics::{Adam, Graph};
use crate::rng::{rng_from_seed, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    pub learning_rate: f64,
    pub mini_batch_size: usize,
    pub epochs: usize,
    pub context_length: usize,
    pub seed: u64,
    pub offline_train_critic: bool,
    pub gamma: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            learning_rate: 1e-4,
            mini_batch_size: 128,
            epochs: 20,
            context_length: 32,
            seed: 0,
            offline_train_critic: true,
            gamma: 0.99,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(MadtError::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.mini_batch_size == 0 {
            return bad("mini_batch_size", "must be at least 1");
        }
        if self.context_length == 0 {
            return bad("context_length", "must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over valid positions.
    pub loss: f64,
    pub value_loss: f64,
    /// Fraction of valid positions where the greedy action equals the target.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_clock_secs: f64,
    pub n_windows: usize,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.accuracy)
    }
}

/// All training windows of a unified corpus.
pub fn corpus_windows(data: &UnifiedDataset, model: &Model, gamma: f64) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for traj in &data.trajectories {
        let span = data
            .reward_scales
            .get(&traj.scenario_id)
            .map(|s| s.span())
            .ok_or_else(|| MadtError::DataIntegrity(format!("{} has no reward scale", traj.source)))?;
        out.extend(windows(traj, &model.config, span, gamma)?);
    }
    Ok(out)
}

/// Fraction of valid positions where the greedy action matches the window
/// target, evaluated without updating.
pub fn action_agreement(model: &Model, ws: &[Window], batch_size: usize) -> Result<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    let mut rng = rng_from_seed(0);
    for chunk in ws.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let tb = target_batch(&refs, &model.config)?;
        let (logits, _) = model.infer(&tb.batch)?;
        let a = model.config.n_actions;
        for i in 0..tb.batch.valid.len() {
            if tb.batch.valid[i] {
                let row = &logits.data()[i * a..(i + 1) * a];
                let g = select_action(row, tb.batch.avail_at(i), ActMode::Greedy, &mut rng)?;
                hit += usize::from(g == tb.actions[i]);
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { hit as f64 / n as f64 })
}

/// Supervised pre-training. `on_epoch` sees each epoch's statistics as soon
/// as they are final.
pub fn pretrain(
    data: &UnifiedDataset,
    model: &mut Model,
    cfg: &OfflineConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.context_length != model.config.context_length {
        return Err(MadtError::Config {
            key: "context_length".into(),
            reason: format!(
                "{} differs from the model's {}",
                cfg.context_length, model.config.context_length
            ),
        });
    }
    if data.dims != model.config.dims() {
        return Err(MadtError::Unification {
            scenario: "<corpus>".into(),
            reason: "dataset dims differ from the model's universal dims".into(),
        });
    }
    let ws = corpus_windows(data, model, cfg.gamma)?;
    if ws.is_empty() {
        return Err(MadtError::DataIntegrity("no trajectories".into()));
    }
    let start = Instant::now();
    let seeds = SeedStream::new(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, model.params());
    let mut order: Vec<usize> = (0..ws.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let a = model.config.n_actions;
    let mut pick = rng_from_seed(0);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeds.rng_indexed("shuffle", epoch as u64));
        let (mut ce_sum, mut v_sum, mut hits, mut n_valid) = (0.0, 0.0, 0usize, 0usize);
        for mb in order.chunks(cfg.mini_batch_size) {
            let refs: Vec<&Window> = mb.iter().map(|&i| &ws[i]).collect();
            let tb = target_batch(&refs, &model.config)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let f = model.forward(&mut g, &bound, &tb.batch)?;
            let ce = ce_loss(&mut g, f.logits, &tb.actions, &tb.batch).map_err(|e| match e {
                MadtError::DataIntegrity(m) => {
                    MadtError::DataIntegrity(format!("{m} (windows {})", sources(&refs)))
                }
                other => other,
            })?;
            let vl = value_loss(&mut g, f.values, &tb.returns, &tb.batch)?;
            let loss = if cfg.offline_train_critic {
                g.add(ce, vl)?
            } else {
                ce
            };
            let (ce_v, vl_v) = (g.value(ce).item()?, g.value(vl).item()?);
            if !ce_v.is_finite() || !vl_v.is_finite() {
                return Err(MadtError::Numerical(format!(
                    "epoch {epoch}: loss ce={ce_v} value={vl_v} on windows {}",
                    sources(&refs)
                )));
            }
            let logits = g.value(f.logits).clone();
            let count = tb.batch.valid.iter().filter(|&&v| v).count();
            for i in 0..tb.batch.valid.len() {
                if tb.batch.valid[i] {
                    let row = &logits.data()[i * a..(i + 1) * a];
                    let greedy = select_action(row, tb.batch.avail_at(i), ActMode::Greedy, &mut pick)?;
                    hits += usize::from(greedy == tb.actions[i]);
                }
            }
            ce_sum += ce_v * count as f64;
            v_sum += vl_v * count as f64;
            n_valid += count;
            g.backward(loss)?;
            let grads = model.grads(&g, &bound);
            adam.step(model.params_mut(), &grads)?;
            if !model.is_finite() {
                return Err(MadtError::Numerical(format!(
                    "epoch {epoch}: parameters became non-finite after windows {}",
                    sources(&refs)
                )));
            }
        }
        let stats = EpochStats {
            epoch,
            loss: ce_sum / n_valid as f64,
            value_loss: v_sum / n_valid as f64,
            accuracy: hits as f64 / n_valid as f64,
        };
        on_epoch(&stats);
        epochs.push(stats);
    }
    Ok(TrainReport {
        epochs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        n_windows: ws.len(),
        checkpoint: None,
    })
}

fn sources(ws: &[&Window]) -> String {
    let shown: Vec<String> = ws.iter().take(8).map(|w| format!("{}@{}", w.source, w.offset)).collect();
    let more = ws.len().saturating_sub(8);
    if more > 0 {
        format!("{} and {more} more", shown.join(", "))
    } else {
        shown.join(", ")
    }
}
