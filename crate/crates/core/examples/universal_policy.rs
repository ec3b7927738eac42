//! One model pre-trained on every training scenario: zero-shot return on the
//! held-out scenario and a short fine-tune on each training scenario.
//!
//! cargo run --release --example universal_policy -- [epochs]

use madt::dataset::{generate, merge, UniversalDims};
use madt::env::{Registry, Tier};
use madt::model::{ActMode, Model, ModelConfig};
use madt::offline::{pretrain, OfflineConfig};
use madt::online::{evaluate, finetune, PpoConfig};
use madt::rng::rng_from_seed;

fn main() -> madt::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let registry = Registry::builtin();
    let dims = UniversalDims::covering(registry.specs().iter());
    let train = registry.training_list();
    let sets = train
        .iter()
        .map(|s| generate(&registry, s, Tier::Good, 200, 1))
        .collect::<madt::Result<Vec<_>>>()?;
    let data = merge(&sets, dims, None)?;
    println!("{} scenarios, {} samples, dims {:?}", train.len(), data.n_samples(), dims);

    let mut model = Model::init(ModelConfig::new(dims), &mut rng_from_seed(0))?;
    let cfg = OfflineConfig {
        learning_rate: 5e-4,
        epochs,
        ..OfflineConfig::default()
    };
    let report = pretrain(&data, &mut model, &cfg, |_| {})?;
    println!("training accuracy {:.4} ({:.0}s)", report.final_accuracy(), report.wall_clock_secs);

    let holdout = registry.holdout();
    let zero = evaluate(registry.get(holdout)?, &model, 32, ActMode::Greedy, 7, 1.0)?;
    println!("zero-shot on {holdout}: return {:.3}, success {:.2}", zero.mean_return, zero.success_rate);

    let ppo = PpoConfig {
        online_lr: 1e-4,
        ppo_epochs: 5,
        total_env_steps: 2000,
        ..PpoConfig::default()
    };
    for s in &train {
        let def = registry.get(s)?;
        let before = evaluate(def, &model, 32, ActMode::Greedy, 7, 1.0)?.mean_return;
        let mut tuned = model.clone();
        let after = finetune(def, &mut tuned, &ppo, None, |_| {})?.final_eval.mean_return;
        let mut scratch = Model::init(model.config.clone(), &mut rng_from_seed(1))?;
        let base = finetune(def, &mut scratch, &ppo, None, |_| {})?.final_eval.mean_return;
        println!("{s:<6} universal {before:.3} -> {after:.3}   scratch {base:.3}");
    }
    Ok(())
}
