use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::network::{ContextBatch, ContextStep, Model};
use crate::error::{MadtError, Result};
use crate::numerics::is_masked;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Greedy,
    Sample,
}

fn legal(logits: &[f64], avail: &[bool], j: usize) -> bool {
    avail[j] && !is_masked(logits[j])
}

/// Softmax over legal entries; illegal entries are exactly 0.
pub fn masked_probs(logits: &[f64], avail: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != avail.len() {
        return Err(MadtError::Dimension {
            op: "masked_probs",
            lhs: vec![logits.len()],
            rhs: vec![avail.len()],
        });
    }
    let max = (0..logits.len())
        .filter(|&j| legal(logits, avail, j))
        .map(|j| logits[j])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(MadtError::NoLegal("empty availability mask".into()));
    }
    let mut p: Vec<f64> = (0..logits.len())
        .map(|j| if legal(logits, avail, j) { (logits[j] - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    Ok(p)
}

/// Log-probability of `action` under the masked softmax.
pub fn masked_log_prob(logits: &[f64], avail: &[bool], action: usize) -> Result<f64> {
    if action >= logits.len() || !legal(logits, avail, action) {
        return Err(MadtError::Contract(format!("action {action} is not available")));
    }
    let max = (0..logits.len())
        .filter(|&j| legal(logits, avail, j))
        .map(|j| logits[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = (0..logits.len())
        .filter(|&j| legal(logits, avail, j))
        .map(|j| (logits[j] - max).exp())
        .sum();
    Ok(logits[action] - max - s.ln())
}

/// Greedy picks the highest legal logit, lowest index on ties; sample draws
/// from the masked softmax.
pub fn select_action(logits: &[f64], avail: &[bool], mode: ActMode, rng: &mut Rng) -> Result<usize> {
    match mode {
        ActMode::Greedy => {
            let mut best: Option<usize> = None;
            for j in 0..logits.len().min(avail.len()) {
                if legal(logits, avail, j) && best.map_or(true, |b| logits[j] > logits[b]) {
                    best = Some(j);
                }
            }
            best.ok_or_else(|| MadtError::NoLegal("empty availability mask".into()))
        }
        ActMode::Sample => {
            let p = masked_probs(logits, avail)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (j, &pj) in p.iter().enumerate() {
                if pj > 0.0 {
                    acc += pj;
                    last = j;
                    if u < acc {
                        return Ok(j);
                    }
                }
            }
            Ok(last)
        }
    }
}

impl Model {
    /// Action for the last position of one agent's context.
    pub fn act(&self, context: &[ContextStep], mode: ActMode, rng: &mut Rng) -> Result<usize> {
        let last = context
            .last()
            .ok_or_else(|| MadtError::Contract("act on an empty context".into()))?;
        let batch = ContextBatch::from_rows(&[context], self.config.token_dim(), self.config.n_actions)?;
        let (logits, _) = self.infer(&batch)?;
        let a = self.config.n_actions;
        let t = context.len() - 1;
        select_action(&logits.data()[t * a..(t + 1) * a], &last.avail, mode, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn greedy_examples() {
        let mut rng = rng_from_seed(0);
        let g = ActMode::Greedy;
        assert_eq!(select_action(&[2.0, 5.0, 1.0], &[true; 3], g, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[2.0, 5.0, 1.0], &[true, false, true], g, &mut rng).unwrap(), 0);
        assert_eq!(select_action(&[3.0, 3.0, 3.0], &[false, true, true], g, &mut rng).unwrap(), 1);
        assert!(matches!(
            select_action(&[1.0, 2.0], &[false, false], g, &mut rng),
            Err(MadtError::NoLegal(_))
        ));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = rng_from_seed(7);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[select_action(&[0.3; 4], &[true; 4], ActMode::Sample, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn masked_probs_are_exactly_zero() {
        let p = masked_probs(&[1.0, 50.0, -3.0], &[true, false, true]).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let lp = masked_log_prob(&[0.0, 0.0, 0.0, 0.0], &[true, true, false, false], 0).unwrap();
        assert!((lp + std::f64::consts::LN_2).abs() < 1e-15);
    }
}
