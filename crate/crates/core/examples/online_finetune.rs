//! PPO fine-tuning from scratch, printing the learning curve. Pass a
//! checkpoint path to start from pre-trained weights instead.
//!
//! cargo run --release --example online_finetune -- [scenario] [budget] [checkpoint]

use std::path::Path;

use madt::dataset::UniversalDims;
use madt::env::Registry;
use madt::model::{Model, ModelConfig};
use madt::online::{finetune, PpoConfig};
use madt::rng::rng_from_seed;

fn main() -> madt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario = args.first().map_or("2a_2t", String::as_str);
    let budget = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);

    let registry = Registry::builtin();
    let def = registry.get(scenario)?;
    let mut model = match args.get(2) {
        Some(p) => Model::load(Path::new(p))?,
        None => Model::init(
            ModelConfig::new(UniversalDims::covering(registry.specs().iter())),
            &mut rng_from_seed(0),
        )?,
    };
    let cfg = PpoConfig {
        online_lr: 5e-4,
        ppo_epochs: 10,
        total_env_steps: budget,
        ..PpoConfig::default()
    };
    let report = finetune(def, &mut model, &cfg, None, |s| {
        println!(
            "iter {:>3}  steps {:>6}  return {:.3}  success {:.2}  kl {:.4}  clip {:.3}",
            s.iteration, s.env_steps, s.mean_return, s.success_rate, s.update.approx_kl, s.update.clip_fraction
        );
    })?;
    println!(
        "final greedy return {:.3}, success {:.2} ({:.1}s)",
        report.final_eval.mean_return, report.final_eval.success_rate, report.wall_clock_secs
    );
    Ok(())
}
