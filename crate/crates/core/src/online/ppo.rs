use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::rollout::{BufferStep, RolloutBuffer};
use crate::error::{MadtError, Result};
use crate::model::{ContextBatch, ContextStep, Model};
use crate::numerics::{clip_grad_norm, Adam, Graph, Tensor, Var};
use crate::offline::{chunk_ranges, discounted_returns, target_log_probs, valid_weights, value_loss};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AdvantageEstimator {
    /// Discounted return minus value.
    MonteCarlo,
    Gae { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLoss {
    ClippedSurrogate,
    /// Return-weighted log-likelihood, no importance weight.
    Reinforce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub ppo_epochs: usize,
    pub online_lr: f64,
    /// Episodes per collection.
    pub buffer_size: usize,
    pub eval_epochs: usize,
    /// Joint environment steps available to the whole run.
    pub total_env_steps: usize,
    pub seed: u64,
    /// Context windows per gradient step.
    pub mini_batch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    pub estimator: AdvantageEstimator,
    pub policy_loss: PolicyLoss,
    /// Return levels whose first crossing is recorded.
    pub thresholds: Vec<f64>,
    /// Initial return-to-go feature for models that take one.
    pub rtg_target: f64,
    /// Ends the run once every threshold has been reached.
    pub stop_at_thresholds: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            clip_eps: 0.2,
            ppo_epochs: 5,
            online_lr: 1e-4,
            buffer_size: 64,
            eval_epochs: 32,
            total_env_steps: 20_000,
            seed: 0,
            mini_batch_size: 128,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 10.0,
            normalize_advantage: true,
            estimator: AdvantageEstimator::MonteCarlo,
            policy_loss: PolicyLoss::ClippedSurrogate,
            thresholds: Vec::new(),
            rtg_target: 1.0,
            stop_at_thresholds: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(MadtError::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps", "must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(self.online_lr > 0.0) {
            return bad("online_lr", "must be positive");
        }
        if self.buffer_size == 0 {
            return bad("buffer_size", "must be at least 1");
        }
        if self.mini_batch_size == 0 {
            return bad("mini_batch_size", "must be at least 1");
        }
        if self.eval_epochs == 0 {
            return bad("eval_epochs", "must be at least 1");
        }
        if let AdvantageEstimator::Gae { lambda } = self.estimator {
            if !(0.0..=1.0).contains(&lambda) {
                return bad("gae_lambda", "must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Per-step returns and unnormalized advantages of one trajectory.
pub fn advantages(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    gamma: f64,
    estimator: AdvantageEstimator,
) -> (Vec<f64>, Vec<f64>) {
    let returns = discounted_returns(rewards, dones, gamma);
    let adv = match estimator {
        AdvantageEstimator::MonteCarlo => returns.iter().zip(values).map(|(r, v)| r - v).collect(),
        AdvantageEstimator::Gae { lambda } => {
            let n = rewards.len();
            let mut adv = vec![0.0; n];
            let mut next_adv = 0.0;
            for t in (0..n).rev() {
                let cont = if dones[t] || t + 1 == n { 0.0 } else { 1.0 };
                let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
                let delta = rewards[t] + gamma * next_v * cont - values[t];
                next_adv = delta + gamma * lambda * cont * next_adv;
                adv[t] = next_adv;
            }
            adv
        }
    };
    (returns, adv)
}

/// Fills returns and advantages; advantages are optionally normalized to zero
/// mean and unit variance over the whole buffer.
pub fn compute_advantage(buf: &mut RolloutBuffer, cfg: &PpoConfig) {
    for traj in &mut buf.trajectories {
        let r: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
        let d: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
        let v: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
        let (ret, adv) = advantages(&r, &d, &v, cfg.gamma, cfg.estimator);
        for (s, (ret, adv)) in traj.steps.iter_mut().zip(ret.into_iter().zip(adv)) {
            s.ret = ret;
            s.advantage = adv;
        }
    }
    if cfg.normalize_advantage {
        let all: Vec<f64> = buf
            .trajectories
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.advantage))
            .collect();
        if all.is_empty() {
            return;
        }
        let n = all.len() as f64;
        let m = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt();
        let denom = if sd > 1e-8 { sd } else { 1.0 };
        for s in buf.trajectories.iter_mut().flat_map(|t| t.steps.iter_mut()) {
            s.advantage = (s.advantage - m) / denom;
        }
    }
}

/// Per-sample clipped surrogate `min(wA, clip(w, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(w: f64, a: f64, eps: f64) -> f64 {
    (w * a).min(w.clamp(1.0 - eps, 1.0 + eps) * a)
}

/// The clipped surrogate on the graph, elementwise over importance weights
/// `w` and constant advantages.
pub fn surrogate(g: &mut Graph, w: Var, adv: Tensor, eps: f64) -> Result<Var> {
    let s1 = g.mul_const(w, adv.clone())?;
    let wc = g.clamp(w, 1.0 - eps, 1.0 + eps);
    let s2 = g.mul_const(wc, adv)?;
    g.minimum(s1, s2)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub steps: usize,
}

struct TrainWindow<'a> {
    steps: &'a [BufferStep],
    ctx: Vec<ContextStep>,
}

fn train_windows(buf: &RolloutBuffer, c: usize) -> Vec<TrainWindow<'_>> {
    let mut out = Vec::new();
    for traj in &buf.trajectories {
        let dones: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
        for r in chunk_ranges(&dones, c) {
            let steps = &traj.steps[r];
            let ctx = steps
                .iter()
                .map(|s| ContextStep {
                    token: s.token.clone(),
                    timestep: s.timestep,
                    avail: s.avail.clone(),
                })
                .collect();
            out.push(TrainWindow { steps, ctx });
        }
    }
    out
}

/// Gradient of the configured objective on one minibatch, before clipping.
/// Returns the loss graph's statistics alongside.
fn minibatch_grads(
    model: &Model,
    ws: &[&TrainWindow<'_>],
    cfg: &PpoConfig,
) -> Result<(Vec<Vec<f64>>, UpdateStats)> {
    let rows: Vec<&[ContextStep]> = ws.iter().map(|w| w.ctx.as_slice()).collect();
    let batch = ContextBatch::from_rows(&rows, model.config.token_dim(), model.config.n_actions)?;
    let n = batch.batch * batch.len;
    let (mut actions, mut old, mut adv, mut ret) = (vec![0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (r, w) in ws.iter().enumerate() {
        for (t, s) in w.steps.iter().enumerate() {
            let i = r * batch.len + t;
            actions[i] = s.action;
            old[i] = s.log_prob;
            adv[i] = s.advantage;
            ret[i] = s.ret;
        }
    }
    let shape = vec![batch.batch, batch.len];
    let weights = valid_weights(&batch)?;
    let valid01 = Tensor::new(shape.clone(), batch.valid.iter().map(|&v| f64::from(u8::from(v))).collect())?;

    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let f = model.forward(&mut g, &bound, &batch)?;
    let lp = target_log_probs(&mut g, f.logits, &actions, &batch)?;
    let mut stats = UpdateStats::default();

    let policy = match cfg.policy_loss {
        PolicyLoss::ClippedSurrogate => {
            let old_v = g.constant(Tensor::new(shape.clone(), old.clone())?);
            let log_w = g.sub(lp, old_v)?;
            let log_w = g.mul_const(log_w, valid01.clone())?;
            let w = g.exp(log_w);
            let (mut clipped, mut kl, mut count) = (0usize, 0.0, 0usize);
            for i in 0..n {
                if !batch.valid[i] {
                    continue;
                }
                let wi = g.value(w).data()[i];
                if !wi.is_finite() {
                    return Err(MadtError::Numerical(format!(
                        "importance weight {wi} from log-probs new={} old={}",
                        g.value(lp).data()[i],
                        old[i]
                    )));
                }
                clipped += usize::from((wi - 1.0).abs() > cfg.clip_eps);
                kl += old[i] - g.value(lp).data()[i];
                count += 1;
            }
            stats.clip_fraction = clipped as f64 / count as f64;
            stats.approx_kl = kl / count as f64;
            let obj = surrogate(&mut g, w, Tensor::new(shape.clone(), adv)?, cfg.clip_eps)?;
            let obj = g.mul_const(obj, weights.clone())?;
            let s = g.sum(obj);
            g.scale(s, -1.0)
        }
        PolicyLoss::Reinforce => {
            let weighted: Vec<f64> = ret.iter().zip(weights.data()).map(|(r, w)| r * w).collect();
            let obj = g.mul_const(lp, Tensor::new(shape.clone(), weighted)?)?;
            let s = g.sum(obj);
            g.scale(s, -1.0)
        }
    };
    let vl = value_loss(&mut g, f.values, &ret, &batch)?;
    let vl_scaled = g.scale(vl, cfg.value_coef);
    let mut loss = g.add(policy, vl_scaled)?;
    if cfg.entropy_coef != 0.0 {
        let a = batch.n_actions;
        let logp = g.masked_log_softmax(f.logits, &Tensor::zeros(vec![a]))?;
        let p = g.exp(logp);
        let plogp = g.mul(p, logp)?;
        let wa = Tensor::from_fn(vec![batch.batch, batch.len, a], |i| weights.data()[i / a]);
        let plogp = g.mul_const(plogp, wa)?;
        let neg_entropy = g.sum(plogp);
        stats.entropy = -g.value(neg_entropy).item()?;
        let e = g.scale(neg_entropy, cfg.entropy_coef);
        loss = g.add(loss, e)?;
    }
    stats.policy_loss = g.value(policy).item()?;
    stats.value_loss = g.value(vl).item()?;
    g.backward(loss)?;
    Ok((model.grads(&g, &bound), stats))
}

/// Policy-gradient direction of one unclipped pass over the whole buffer
/// (for diagnostics and tests).
pub fn policy_gradient(model: &Model, buf: &RolloutBuffer, cfg: &PpoConfig) -> Result<Vec<f64>> {
    let ws = train_windows(buf, model.config.context_length);
    let refs: Vec<&TrainWindow<'_>> = ws.iter().collect();
    let (grads, _) = minibatch_grads(model, &refs, cfg)?;
    Ok(grads.into_iter().flatten().collect())
}

/// `ppo_epochs` passes over shuffled minibatches of context windows.
pub fn ppo_update(
    buf: &RolloutBuffer,
    model: &mut Model,
    adam: &mut Adam,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let ws = train_windows(buf, model.config.context_length);
    if ws.is_empty() {
        return Err(MadtError::Contract("update on an empty buffer".into()));
    }
    let mut order: Vec<usize> = (0..ws.len()).collect();
    let mut total = UpdateStats::default();
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for mb in order.chunks(cfg.mini_batch_size) {
            let refs: Vec<&TrainWindow<'_>> = mb.iter().map(|&i| &ws[i]).collect();
            let (mut grads, s) = minibatch_grads(model, &refs, cfg)?;
            let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            adam.step(model.params_mut(), &grads)?;
            if !model.is_finite() {
                return Err(MadtError::Numerical(
                    "parameters became non-finite during the policy update".into(),
                ));
            }
            total.policy_loss += s.policy_loss;
            total.value_loss += s.value_loss;
            total.entropy += s.entropy;
            total.clip_fraction += s.clip_fraction;
            total.approx_kl += s.approx_kl;
            total.grad_norm += norm;
            total.steps += 1;
        }
    }
    let k = total.steps.max(1) as f64;
    total.policy_loss /= k;
    total.value_loss /= k;
    total.entropy /= k;
    total.clip_fraction /= k;
    total.approx_kl /= k;
    total.grad_norm /= k;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        let (ret, adv) = advantages(
            &[1.0, 1.0, 1.0],
            &[false, false, true],
            &[2.0; 3],
            0.9,
            AdvantageEstimator::MonteCarlo,
        );
        let want = [0.71, -0.1, -1.0];
        for i in 0..3 {
            assert!((adv[i] - want[i]).abs() < 1e-12);
        }
        assert!((ret[0] - 2.71).abs() < 1e-12);

        let (_, adv) = advantages(
            &[0.5, -1.0],
            &[false, true],
            &[0.25, 0.5],
            0.0,
            AdvantageEstimator::MonteCarlo,
        );
        assert_eq!(adv, vec![0.25, -1.5]);

        let (_, adv) = advantages(&[0.0; 4], &[false, false, false, true], &[0.0; 4], 0.99, AdvantageEstimator::MonteCarlo);
        assert_eq!(adv, vec![0.0; 4]);
    }

    #[test]
    fn gae_with_unit_lambda_matches_monte_carlo() {
        let r = [0.3, -0.2, 1.0, 0.5, 0.1];
        let d = [false, false, true, false, true];
        let v = [0.4, 0.1, -0.3, 0.2, 0.0];
        let (_, mc) = advantages(&r, &d, &v, 0.95, AdvantageEstimator::MonteCarlo);
        let (_, gae) = advantages(&r, &d, &v, 0.95, AdvantageEstimator::Gae { lambda: 1.0 });
        for (a, b) in mc.iter().zip(&gae) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_examples() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
    }
}
