//! Finite-difference check of the network's cross-entropy gradient at a tiny
//! configuration.

use madt::dataset::UniversalDims;
use madt::model::{Bound, ContextBatch, ContextStep, Model, ModelConfig};
use madt::numerics::{grad_check_many, Graph, Var};
use madt::offline::ce_loss;
use madt::rng::rng_from_seed;

fn main() -> madt::Result<()> {
    let dims = UniversalDims {
        state_dim: 3,
        obs_dim: 2,
        n_actions: 4,
        max_agents: 2,
    };
    let cfg = ModelConfig {
        n_layer: 1,
        n_head: 1,
        n_embd: 4,
        context_length: 2,
        max_timestep: 10,
        ..ModelConfig::new(dims)
    };
    let model = Model::init(cfg.clone(), &mut rng_from_seed(0))?;
    let steps = vec![
        ContextStep {
            token: cfg.token(&[0.1, -0.4, 0.7], &[0.5, 0.2], 0, None)?,
            timestep: 0,
            avail: vec![true, true, false, true],
        },
        ContextStep {
            token: cfg.token(&[0.3, 0.0, -0.2], &[-0.1, 0.9], 0, None)?,
            timestep: 1,
            avail: vec![false, true, true, true],
        },
    ];
    let batch = ContextBatch::from_rows(&[&steps], cfg.token_dim(), cfg.n_actions)?;
    let targets = [3, 2];
    let err = grad_check_many(
        |g: &mut Graph, vars: &[Var]| {
            let b = Bound { vars: vars.to_vec() };
            let f = model.forward(g, &b, &batch)?;
            ce_loss(g, f.logits, &targets, &batch)
        },
        model.params(),
        1e-6,
    )?;
    println!("{} parameters, worst relative error {err:.2e}", model.n_parameters());
    Ok(())
}
