//! Matched pre-trained vs from-scratch fine-tuning.

use super::config::RunConfig;
use super::report::{CompareReport, ComparePair};
use crate::dataset::generate;
use crate::env::{Registry, Tier};
use crate::error::Result;
use crate::model::Model;
use crate::online::{finetune, FinetuneReport, PpoConfig};
use crate::rng::{derive_seed, rng_from_seed};

/// Mean team return of the good-tier scripted policy on `scenario`.
pub fn reference_return(registry: &Registry, scenario: &str, episodes: usize, seed: u64) -> Result<f64> {
    let ds = generate(registry, scenario, Tier::Good, episodes, seed)?;
    Ok(ds.manifest.reward_mean)
}

/// Fresh weights with the same architecture as `like`, seeded per replicate.
pub fn scratch_model(like: &Model, cfg: &RunConfig, replicate: u64) -> Result<Model> {
    Model::init(
        like.config.clone(),
        &mut rng_from_seed(derive_seed(cfg.seed, "scratch-init", replicate)),
    )
}

/// Runs both arms for `cfg.compare.seeds` replicates. Both arms of a
/// replicate share the rollout and minibatch seeds.
pub fn compare(
    registry: &Registry,
    scenario: &str,
    pretrained: &Model,
    cfg: &RunConfig,
    mut on_run: impl FnMut(&str, usize, &FinetuneReport),
) -> Result<CompareReport> {
    let def = registry.get(scenario)?;
    let c = &cfg.compare;
    let reference = reference_return(registry, scenario, c.reference_episodes, cfg.stream("reference"))?;
    let thresholds: Vec<f64> = c.threshold_fractions.iter().map(|f| f * reference).collect();
    let mut pairs = Vec::with_capacity(c.seeds);
    for k in 0..c.seeds {
        let ppo = PpoConfig {
            thresholds: thresholds.clone(),
            ..cfg.ppo_config(k as u64)
        };
        let mut m = pretrained.clone();
        let pre = finetune(def, &mut m, &ppo, None, |_| {})?;
        on_run("pretrained", k, &pre);
        let mut m = scratch_model(pretrained, cfg, k as u64)?;
        let scratch = finetune(def, &mut m, &ppo, None, |_| {})?;
        on_run("scratch", k, &scratch);
        pairs.push(ComparePair {
            seed_index: k,
            pretrained: pre,
            scratch,
        });
    }
    Ok(CompareReport {
        scenario_id: scenario.to_string(),
        reference_return: reference,
        threshold_fractions: c.threshold_fractions.clone(),
        thresholds,
        pairs,
    })
}
