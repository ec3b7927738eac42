use crate::error::{MadtError, Result};
use crate::model::ContextBatch;
use crate::numerics::{Graph, Tensor, Var};

/// Per-position weights `valid / n_valid`, shape `[B×T]`.
pub fn valid_weights(batch: &ContextBatch) -> Result<Tensor> {
    let n = batch.valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(MadtError::Contract("batch has no valid position".into()));
    }
    let w = 1.0 / n as f64;
    Tensor::new(
        vec![batch.batch, batch.len],
        batch.valid.iter().map(|&v| if v { w } else { 0.0 }).collect(),
    )
}

/// Log-probabilities of `targets` under the masked policy, shape `[B×T]`.
/// Targets at invalid positions are ignored.
pub fn target_log_probs(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    batch: &ContextBatch,
) -> Result<Var> {
    let a = batch.n_actions;
    let mut idx = Vec::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        if !batch.valid[i] {
            idx.push(0);
            continue;
        }
        if t >= a || !batch.avail_at(i)[t] {
            return Err(MadtError::DataIntegrity(format!(
                "row {} position {}: target action {t} is unavailable",
                i / batch.len,
                i % batch.len
            )));
        }
        idx.push(t);
    }
    let lp = g.masked_log_softmax(logits, &Tensor::zeros(vec![a]))?;
    g.gather(lp, &idx)
}

/// Mean over valid positions of −log p(target).
pub fn ce_loss(g: &mut Graph, logits: Var, targets: &[usize], batch: &ContextBatch) -> Result<Var> {
    let lp = target_log_probs(g, logits, targets, batch)?;
    let w = valid_weights(batch)?;
    let weighted = g.mul_const(lp, w)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, -1.0))
}

/// Mean over valid positions of ½(target − value)².
pub fn value_loss(g: &mut Graph, values: Var, targets: &[f64], batch: &ContextBatch) -> Result<Var> {
    let t = g.constant(Tensor::new(vec![batch.batch, batch.len], targets.to_vec())?);
    let d = g.sub(values, t)?;
    let sq = g.square(d);
    let weighted = g.mul_const(sq, valid_weights(batch)?)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, 0.5))
}
