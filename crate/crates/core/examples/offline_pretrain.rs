//! Offline pre-training on good-tier data, then greedy evaluation against the
//! scripted generator.
//!
//! cargo run --release --example offline_pretrain -- [epochs] [learning_rate]

use madt::dataset::{generate, merge, UniversalDims};
use madt::env::{Registry, Tier};
use madt::model::{ActMode, Model, ModelConfig};
use madt::offline::{action_agreement, corpus_windows, pretrain, OfflineConfig};
use madt::online::evaluate;
use madt::rng::rng_from_seed;

fn main() -> madt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(60);
    let lr = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5e-4);
    let scenario = "2a_2t";

    let registry = Registry::builtin();
    let dims = UniversalDims::covering(registry.specs().iter());
    let train = generate(&registry, scenario, Tier::Good, 200, 1)?;
    let generator_return = train.manifest.reward_mean;
    let data = merge(&[train], dims, None)?;
    println!("{} samples, {} trajectories", data.n_samples(), data.trajectories.len());

    let mut model = Model::init(ModelConfig::new(dims), &mut rng_from_seed(0))?;
    println!("{} parameters", model.n_parameters());
    let cfg = OfflineConfig {
        learning_rate: lr,
        epochs,
        ..OfflineConfig::default()
    };
    let report = pretrain(&data, &mut model, &cfg, |e| {
        if e.epoch % 10 == 0 {
            println!("epoch {:>3}  loss {:.4}  value {:.4}  acc {:.4}", e.epoch, e.loss, e.value_loss, e.accuracy);
        }
    })?;
    println!("trained in {:.1}s", report.wall_clock_secs);

    let held_out = merge(&[generate(&registry, scenario, Tier::Good, 50, 2)?], dims, None)?;
    let agreement = action_agreement(&model, &corpus_windows(&held_out, &model, cfg.gamma)?, 128)?;
    let eval = evaluate(registry.get(scenario)?, &model, 32, ActMode::Greedy, 3, 1.0)?;
    println!("held-out agreement {agreement:.4}");
    println!(
        "greedy return {:.3} (generator {:.3}), success {:.2}",
        eval.mean_return, generator_return, eval.success_rate
    );
    Ok(())
}
