//! Environment steps needed to reach 80% of the good-tier return, with and
//! without offline pre-training, over several seeds.
//!
//! cargo run --release --example pretrain_vs_scratch -- [seeds]

use madt::cli::{compare, RunConfig};
use madt::dataset::{generate, merge, UniversalDims};
use madt::env::{Registry, Tier};
use madt::model::{Model, ModelConfig};
use madt::offline::{pretrain, OfflineConfig};
use madt::rng::rng_from_seed;

fn main() -> madt::Result<()> {
    let seeds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let scenario = "2a_2t";
    let registry = Registry::builtin();
    let dims = UniversalDims::covering(registry.specs().iter());

    let data = merge(&[generate(&registry, scenario, Tier::Good, 200, 1)?], dims, None)?;
    let mut model = Model::init(ModelConfig::new(dims), &mut rng_from_seed(0))?;
    let offline = OfflineConfig {
        learning_rate: 5e-4,
        epochs: 60,
        ..OfflineConfig::default()
    };
    pretrain(&data, &mut model, &offline, |_| {})?;

    let cfg = RunConfig::parse(
        "[finetune]\nonline_lr = 5e-4\nonline_ppo_epochs = 10\ntotal_env_steps = 30000\nstop_at_thresholds = true\n",
        &[format!("compare.seeds={seeds}")],
    )?;
    let report = compare(&registry, scenario, &model, &cfg, |arm, k, r| {
        println!("seed {k} {arm:<10} reached after {:?} steps", r.steps_to_threshold[0].env_steps);
    })?;
    print!("\n{}", report.threshold_table_csv());
    Ok(())
}
