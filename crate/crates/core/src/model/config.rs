use serde::{Deserialize, Serialize};

use crate::dataset::UniversalDims;
use crate::error::{MadtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub context_length: usize,
    pub max_timestep: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub max_agents: usize,
    /// Appends a return-to-go feature to every token.
    #[serde(default)]
    pub use_rtg: bool,
}

impl ModelConfig {
    pub fn new(dims: UniversalDims) -> Self {
        ModelConfig {
            n_layer: 2,
            n_head: 2,
            n_embd: 32,
            context_length: 32,
            max_timestep: 400,
            state_dim: dims.state_dim,
            obs_dim: dims.obs_dim,
            n_actions: dims.n_actions,
            max_agents: dims.max_agents,
            use_rtg: false,
        }
    }

    pub fn dims(&self) -> UniversalDims {
        UniversalDims {
            state_dim: self.state_dim,
            obs_dim: self.obs_dim,
            n_actions: self.n_actions,
            max_agents: self.max_agents,
        }
    }

    /// state ‖ observation ‖ one-hot agent ID (‖ return-to-go).
    pub fn token_dim(&self) -> usize {
        self.state_dim + self.obs_dim + self.max_agents + usize::from(self.use_rtg)
    }

    pub fn head_dim(&self) -> usize {
        self.n_embd / self.n_head
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.n_embd
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(MadtError::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.n_layer == 0 {
            return bad("n_layer", "must be at least 1");
        }
        if self.n_head == 0 || self.n_embd % self.n_head != 0 {
            return bad("n_head", "n_embd must be divisible by n_head");
        }
        if self.context_length == 0 {
            return bad("context_length", "must be at least 1");
        }
        if self.n_actions == 0 || self.max_agents == 0 {
            return bad("n_actions", "universal dims must be positive");
        }
        Ok(())
    }

    /// Builds a token from raw (already padded) features.
    pub fn token(
        &self,
        state: &[f64],
        obs: &[f64],
        agent_id: usize,
        rtg: Option<f64>,
    ) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || obs.len() != self.obs_dim {
            return Err(MadtError::Dimension {
                op: "token",
                lhs: vec![state.len(), obs.len()],
                rhs: vec![self.state_dim, self.obs_dim],
            });
        }
        if agent_id >= self.max_agents {
            return Err(MadtError::Contract(format!(
                "agent id {agent_id} with max_agents {}",
                self.max_agents
            )));
        }
        let mut t = Vec::with_capacity(self.token_dim());
        t.extend_from_slice(state);
        t.extend_from_slice(obs);
        t.extend((0..self.max_agents).map(|i| if i == agent_id { 1.0 } else { 0.0 }));
        if self.use_rtg {
            t.push(rtg.unwrap_or(0.0));
        }
        Ok(t)
    }
}

/// Sinusoidal encoding of an absolute timestep.
pub fn positional_encoding(pos: usize, d_model: usize, max_timestep: usize) -> Result<Vec<f64>> {
    if pos > max_timestep {
        return Err(MadtError::Contract(format!(
            "timestep {pos} exceeds max_timestep {max_timestep}"
        )));
    }
    Ok((0..d_model)
        .map(|i| {
            let pair = (i - i % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_examples() {
        let pe = positional_encoding(0, 32, 400).unwrap();
        for (i, v) in pe.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        let pe = positional_encoding(1, 32, 400).unwrap();
        assert!((pe[0] - 0.841_470_984_807_896_5).abs() < 1e-12);
        assert!((pe[1] - 0.540_302_305_868_139_8).abs() < 1e-12);
        assert!(positional_encoding(401, 32, 400).is_err());
    }

    #[test]
    fn token_layout() {
        let mut cfg = ModelConfig::new(UniversalDims {
            state_dim: 2,
            obs_dim: 1,
            n_actions: 3,
            max_agents: 3,
        });
        assert_eq!(cfg.token(&[1.0, 2.0], &[3.0], 1, None).unwrap(), vec![1.0, 2.0, 3.0, 0.0, 1.0, 0.0]);
        cfg.use_rtg = true;
        assert_eq!(cfg.token(&[1.0, 2.0], &[3.0], 2, Some(0.5)).unwrap().len(), 7);
        assert!(cfg.token(&[1.0], &[3.0], 0, None).is_err());
    }
}
