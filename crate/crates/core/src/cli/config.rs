//! Run configuration: a TOML file with one section per subcommand, plus
//! `section.key=value` overrides from the command line.

use serde::{Deserialize, Serialize};

use crate::dataset::UniversalDims;
use crate::error::{MadtError, Result};
use crate::model::ModelConfig;
use crate::offline::OfflineConfig;
use crate::online::{AdvantageEstimator, PolicyLoss, PpoConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub context_length: usize,
    pub max_timestep: usize,
    pub use_rtg: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_layer: 2,
            n_head: 2,
            n_embd: 32,
            context_length: 32,
            max_timestep: 400,
            use_rtg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    #[serde(alias = "offline_lr")]
    pub learning_rate: f64,
    pub mini_batch_size: usize,
    pub epochs: usize,
    pub offline_train_critic: bool,
    pub gamma: f64,
    /// Scenario ids to train on; empty takes every dataset found.
    pub offline_map_lists: Vec<String>,
    /// Episodes taken from each dataset; absent takes all.
    pub offline_episode_num: Option<usize>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let o = OfflineConfig::default();
        PretrainSection {
            learning_rate: o.learning_rate,
            mini_batch_size: o.mini_batch_size,
            epochs: o.epochs,
            offline_train_critic: o.offline_train_critic,
            gamma: o.gamma,
            offline_map_lists: Vec::new(),
            offline_episode_num: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub online_lr: f64,
    #[serde(alias = "ppo_epochs")]
    pub online_ppo_epochs: usize,
    #[serde(alias = "online_buffer_size")]
    pub buffer_size: usize,
    pub eval_epochs: usize,
    pub total_env_steps: usize,
    pub gamma: f64,
    pub clip_eps: f64,
    pub mini_batch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    /// Switches the advantage estimator to GAE with this λ.
    pub gae_lambda: Option<f64>,
    pub reinforce: bool,
    pub thresholds: Vec<f64>,
    pub rtg_target: f64,
    pub stop_at_thresholds: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        FinetuneSection {
            online_lr: p.online_lr,
            online_ppo_epochs: p.ppo_epochs,
            buffer_size: p.buffer_size,
            eval_epochs: p.eval_epochs,
            total_env_steps: p.total_env_steps,
            gamma: p.gamma,
            clip_eps: p.clip_eps,
            mini_batch_size: p.mini_batch_size,
            value_coef: p.value_coef,
            entropy_coef: p.entropy_coef,
            max_grad_norm: p.max_grad_norm,
            normalize_advantage: p.normalize_advantage,
            gae_lambda: None,
            reinforce: false,
            thresholds: Vec::new(),
            rtg_target: p.rtg_target,
            stop_at_thresholds: p.stop_at_thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub seeds: usize,
    /// Thresholds as fractions of the good-tier scripted return.
    pub threshold_fractions: Vec<f64>,
    pub reference_episodes: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            seeds: 5,
            threshold_fractions: vec![0.8],
            reference_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub compare: CompareSection,
}

fn config_error(e: impl std::fmt::Display) -> MadtError {
    let msg = e.to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<config>".into());
    MadtError::Config {
        key,
        reason: msg.trim().replace('\n', " "),
    }
}

impl RunConfig {
    /// Parses `text` and applies `overrides` of the form `section.key=value`
    /// (value in TOML syntax; bare words are taken as strings).
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut root: toml::Table = text.parse().map_err(config_error)?;
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| MadtError::Config {
                key: o.clone(),
                reason: "override must look like section.key=value".into(),
            })?;
            let value: toml::Value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut parts: Vec<&str> = path.trim().split('.').collect();
            let leaf = parts.pop().unwrap_or_default();
            let mut table = &mut root;
            for p in parts {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| MadtError::Config {
                        key: path.into(),
                        reason: format!("{p} is not a section"),
                    })?;
            }
            table.insert(leaf.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(root).try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.offline_config().validate()?;
        self.ppo_config(0).validate()?;
        let m = &self.model;
        if m.n_head == 0 || m.n_embd % m.n_head != 0 {
            return Err(MadtError::Config {
                key: "model.n_head".into(),
                reason: "n_embd must be divisible by n_head".into(),
            });
        }
        if self.compare.threshold_fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(MadtError::Config {
                key: "compare.threshold_fractions".into(),
                reason: "fractions must be positive".into(),
            });
        }
        Ok(())
    }

    /// Named sub-stream seed.
    pub fn stream(&self, name: &str) -> u64 {
        derive_seed(self.seed, name, 0)
    }

    pub fn model_config(&self, dims: UniversalDims) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_layer: m.n_layer,
            n_head: m.n_head,
            n_embd: m.n_embd,
            context_length: m.context_length,
            max_timestep: m.max_timestep,
            use_rtg: m.use_rtg,
            ..ModelConfig::new(dims)
        }
    }

    pub fn offline_config(&self) -> OfflineConfig {
        let p = &self.pretrain;
        OfflineConfig {
            learning_rate: p.learning_rate,
            mini_batch_size: p.mini_batch_size,
            epochs: p.epochs,
            context_length: self.model.context_length,
            seed: self.stream("pretrain"),
            offline_train_critic: p.offline_train_critic,
            gamma: p.gamma,
        }
    }

    /// Fine-tuning settings; `replicate` selects an independent seed.
    pub fn ppo_config(&self, replicate: u64) -> PpoConfig {
        let f = &self.finetune;
        PpoConfig {
            gamma: f.gamma,
            clip_eps: f.clip_eps,
            ppo_epochs: f.online_ppo_epochs,
            online_lr: f.online_lr,
            buffer_size: f.buffer_size,
            eval_epochs: f.eval_epochs,
            total_env_steps: f.total_env_steps,
            seed: derive_seed(self.seed, "finetune", replicate),
            mini_batch_size: f.mini_batch_size,
            value_coef: f.value_coef,
            entropy_coef: f.entropy_coef,
            max_grad_norm: f.max_grad_norm,
            normalize_advantage: f.normalize_advantage,
            estimator: match f.gae_lambda {
                Some(lambda) => AdvantageEstimator::Gae { lambda },
                None => AdvantageEstimator::MonteCarlo,
            },
            policy_loss: if f.reinforce {
                PolicyLoss::Reinforce
            } else {
                PolicyLoss::ClippedSurrogate
            },
            thresholds: f.thresholds.clone(),
            rtg_target: f.rtg_target,
            stop_at_thresholds: f.stop_at_thresholds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_field_names_and_overrides() {
        let text = "seed = 3\n[pretrain]\noffline_lr = 5e-4\noffline_map_lists = [\"2a_2t\"]\n[finetune]\nonline_ppo_epochs = 10\n";
        let cfg = RunConfig::parse(text, &["finetune.online_lr=5e-4".into(), "model.use_rtg=true".into()]).unwrap();
        assert_eq!(cfg.pretrain.learning_rate, 5e-4);
        assert_eq!(cfg.finetune.online_ppo_epochs, 10);
        assert_eq!(cfg.finetune.online_lr, 5e-4);
        assert!(cfg.model.use_rtg);
        assert_eq!(RunConfig::parse(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let err = RunConfig::parse("[pretrain]\nlearning_rat = 1.0\n", &[]).unwrap_err();
        match err {
            MadtError::Config { key, .. } => assert_eq!(key, "learning_rat"),
            other => panic!("{other}"),
        }
        let err = RunConfig::parse("", &["finetune.clip_eps=1.5".into()]).unwrap_err();
        assert!(matches!(err, MadtError::Config { ref key, .. } if key == "clip_eps"));
        assert_eq!(err.exit_code(), 2);
    }
}
