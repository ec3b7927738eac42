//! Command-line front end. Each subcommand writes its resolved config, root
//! seed, input hashes and metrics next to its outputs.

mod compare;
mod config;
mod report;
mod run_dir;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

pub use compare::{compare, reference_return, scratch_model};
pub use config::{CompareSection, FinetuneSection, ModelSection, PretrainSection, RunConfig};
pub use report::{median, median_steps, thresholds_csv, CompareReport, ComparePair};
pub use run_dir::{content_hash, JsonLines, RunDir};

use crate::dataset::{
    dataset_files, format_table, generate, merge, read_dataset, stats, write_dataset, Dataset,
    DatasetManifest, UniversalDims,
};
use crate::env::{Registry, Tier};
use crate::error::{MadtError, Result};
use crate::model::{ActMode, Model};
use crate::offline::pretrain;
use crate::online::{evaluate, finetune};
use crate::rng::rng_from_seed;

#[derive(Debug, Parser)]
#[command(name = "madt", version, about = "Multi-agent decision transformer: offline pre-training and online fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out a scripted behavior policy and write a dataset file.
    GenData {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        tier: Tier,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check dataset manifests against their records and print a summary table.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Offline pre-training on every dataset in a directory.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Config override, `section.key=value`; repeatable.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Online fine-tuning from a checkpoint, or from scratch with `--ckpt none`.
    Finetune {
        #[arg(long)]
        env: String,
        #[arg(long)]
        ckpt: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Mean return and success rate of a checkpoint.
    Evaluate {
        #[arg(long)]
        env: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 32)]
        episodes: usize,
        #[arg(long, default_value = "greedy")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-trained vs from-scratch fine-tuning over several seeds.
    Compare {
        #[arg(long)]
        env: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            scenario,
            tier,
            episodes,
            seed,
            out,
        } => cmd_gen_data(&scenario, tier, episodes, seed, &out),
        Command::Stats { data } => cmd_stats(&data),
        Command::Pretrain {
            data,
            config,
            out,
            overrides,
        } => cmd_pretrain(&data, &load_config(config.as_deref(), &overrides)?, &out),
        Command::Finetune {
            env,
            ckpt,
            config,
            out,
            overrides,
        } => cmd_finetune(&env, &ckpt, &load_config(config.as_deref(), &overrides)?, &out),
        Command::Evaluate {
            env,
            ckpt,
            episodes,
            mode,
            seed,
            out,
        } => cmd_evaluate(&env, &ckpt, episodes, &mode, seed, out.as_deref()),
        Command::Compare {
            env,
            ckpt,
            config,
            out,
            seeds,
            mut overrides,
        } => {
            if let Some(n) = seeds {
                overrides.push(format!("compare.seeds={n}"));
            }
            cmd_compare(&env, &ckpt, &load_config(config.as_deref(), &overrides)?, &out)
        }
    }
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| MadtError::io(p, e))?,
        None => String::new(),
    };
    RunConfig::parse(&text, overrides)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| MadtError::io(path, e))
}

pub fn cmd_gen_data(scenario: &str, tier: Tier, episodes: usize, seed: u64, out: &Path) -> Result<()> {
    let registry = Registry::builtin();
    let ds = generate(&registry, scenario, tier, episodes, seed)?;
    let path = write_dataset(&ds, out)?;
    println!("{}", serde_json::to_string(&ds.manifest).expect("manifest serializes"));
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn check_manifest(stored: &DatasetManifest, fresh: &DatasetManifest, path: &Path) -> Result<()> {
    let same = stored.scenario_id == fresh.scenario_id
        && stored.n_episodes == fresh.n_episodes
        && stored.n_samples == fresh.n_samples
        && close(stored.reward_mean, fresh.reward_mean)
        && close(stored.reward_std, fresh.reward_std);
    if same {
        Ok(())
    } else {
        Err(MadtError::DataIntegrity(format!(
            "{}: manifest {stored:?} disagrees with records {fresh:?}",
            path.display()
        )))
    }
}

/// Reads every dataset in `dir` and verifies its manifest.
pub fn load_checked(dir: &Path) -> Result<Vec<(PathBuf, Dataset)>> {
    let files = dataset_files(dir)?;
    if files.is_empty() {
        return Err(MadtError::DataIntegrity(format!("no dataset files in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let ds = read_dataset(&p)?;
            check_manifest(&ds.manifest, &stats(&ds), &p)?;
            Ok((p, ds))
        })
        .collect()
}

pub fn cmd_stats(dir: &Path) -> Result<()> {
    let sets = load_checked(dir)?;
    let manifests: Vec<DatasetManifest> = sets.iter().map(|(_, d)| d.manifest.clone()).collect();
    print!("{}", format_table(&manifests));
    Ok(())
}

/// Universal dimensions covering every registered scenario and `extra`.
pub fn universal_dims<'a>(registry: &Registry, extra: impl IntoIterator<Item = &'a Dataset>) -> UniversalDims {
    let mut specs = registry.specs();
    specs.extend(extra.into_iter().map(|d| d.task.clone()));
    UniversalDims::covering(specs.iter())
}

pub fn cmd_pretrain(data: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let registry = Registry::builtin();
    let mut sets = load_checked(data)?;
    let wanted = &cfg.pretrain.offline_map_lists;
    if !wanted.is_empty() {
        for id in wanted {
            if !sets.iter().any(|(_, d)| &d.task.scenario_id == id) {
                return Err(MadtError::Config {
                    key: "pretrain.offline_map_lists".into(),
                    reason: format!("no dataset for `{id}` in {}", data.display()),
                });
            }
        }
        sets.retain(|(_, d)| wanted.contains(&d.task.scenario_id));
    }
    let (paths, datasets): (Vec<PathBuf>, Vec<Dataset>) = sets.into_iter().unzip();
    let dims = universal_dims(&registry, &datasets);
    let counts: Option<Vec<usize>> = cfg
        .pretrain
        .offline_episode_num
        .map(|n| vec![n; datasets.len()]);
    let corpus = merge(&datasets, dims, counts.as_deref())?;

    let run = RunDir::create(out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")))?;
    run.record(cfg, &paths)?;
    let mut metrics = run.metrics("metrics.jsonl")?;
    let mut model = Model::init(cfg.model_config(dims), &mut rng_from_seed(cfg.stream("init")))?;
    let mut sink = Ok(());
    let mut report = pretrain(&corpus, &mut model, &cfg.offline_config(), |e| {
        eprintln!("epoch {:>4}  loss {:.5}  acc {:.4}", e.epoch, e.loss, e.accuracy);
        if sink.is_ok() {
            sink = metrics.push(e);
        }
    })?;
    sink?;
    let provenance = json!({
        "command": "pretrain",
        "seed": cfg.seed,
        "scenarios": datasets.iter().map(|d| d.task.scenario_id.clone()).collect::<Vec<_>>(),
        "samples": corpus.n_samples(),
        "epochs": cfg.pretrain.epochs,
        "final_accuracy": report.final_accuracy(),
    });
    model.save(out, provenance)?;
    report.checkpoint = Some(out.to_path_buf());
    write_json(&run.file("train_report.json"), &report)?;
    println!(
        "{} epochs, final accuracy {:.4}, checkpoint {}",
        report.epochs.len(),
        report.final_accuracy(),
        out.display()
    );
    Ok(())
}

/// `none` gives fresh weights sized for every registered scenario.
pub fn load_or_init(ckpt: &str, registry: &Registry, cfg: &RunConfig) -> Result<Model> {
    if ckpt == "none" {
        let dims = universal_dims(registry, []);
        Model::init(cfg.model_config(dims), &mut rng_from_seed(cfg.stream("init")))
    } else {
        Model::load(Path::new(ckpt))
    }
}

pub fn cmd_finetune(env: &str, ckpt: &str, cfg: &RunConfig, out: &Path) -> Result<()> {
    let registry = Registry::builtin();
    let def = registry.get(env)?;
    let mut model = load_or_init(ckpt, &registry, cfg)?;
    let run = RunDir::create(out)?;
    let inputs: Vec<PathBuf> = if ckpt == "none" { vec![] } else { vec![PathBuf::from(ckpt)] };
    run.record(cfg, &inputs)?;
    let ppo = cfg.ppo_config(0);
    let mut metrics = run.metrics("metrics.jsonl")?;
    let mut sink = Ok(());
    let report = finetune(def, &mut model, &ppo, Some(&run.file("state")), |s| {
        eprintln!(
            "iter {:>4}  steps {:>7}  return {:.4}  success {:.3}",
            s.iteration, s.env_steps, s.mean_return, s.success_rate
        );
        if sink.is_ok() {
            sink = metrics.push(&json!({
                "iteration": s.iteration,
                "env_steps": s.env_steps,
                "mean_return": s.mean_return,
                "success_rate": s.success_rate,
                "policy_loss": s.update.policy_loss,
                "value_loss": s.update.value_loss,
            }));
        }
    })?;
    sink?;
    run.write("steps_to_threshold.csv", &thresholds_csv(&report))?;
    write_json(&run.file("report.json"), &report)?;
    model.save(
        &run.file("model.ckpt"),
        json!({"command": "finetune", "scenario": env, "init": ckpt, "seed": cfg.seed, "env_steps": report.env_steps}),
    )?;
    if report.insufficient_budget {
        eprintln!("budget ran out before the first update");
    }
    println!(
        "{} env steps, {} updates, final greedy return {:.4} (success {:.3})",
        report.env_steps, report.updates, report.final_eval.mean_return, report.final_eval.success_rate
    );
    Ok(())
}

pub fn cmd_evaluate(env: &str, ckpt: &Path, episodes: usize, mode: &str, seed: u64, out: Option<&Path>) -> Result<()> {
    let registry = Registry::builtin();
    let def = registry.get(env)?;
    let mode = match mode {
        "greedy" => ActMode::Greedy,
        "sample" => ActMode::Sample,
        other => {
            return Err(MadtError::Config {
                key: "mode".into(),
                reason: format!("expected greedy|sample, got `{other}`"),
            })
        }
    };
    if episodes == 0 {
        return Err(MadtError::Config {
            key: "episodes".into(),
            reason: "must be positive".into(),
        });
    }
    let model = Model::load(ckpt)?;
    let report = evaluate(def, &model, episodes, mode, seed, 1.0)?;
    if let Some(dir) = out {
        let run = RunDir::create(dir)?;
        run.write("seed", &format!("{seed}\n"))?;
        let bytes = fs::read(ckpt).map_err(|e| MadtError::io(ckpt, e))?;
        run.write("inputs.sha256", &format!("{}  {}\n", content_hash(&bytes), ckpt.display()))?;
        write_json(&run.file("eval.json"), &report)?;
    }
    println!(
        "{env}: mean return {:.4} over {} episodes, success rate {:.3}",
        report.mean_return, report.episodes, report.success_rate
    );
    Ok(())
}

pub fn cmd_compare(env: &str, ckpt: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let registry = Registry::builtin();
    let pretrained = Model::load(ckpt)?;
    let run = RunDir::create(out)?;
    run.record(cfg, &[ckpt.to_path_buf()])?;
    let report = compare(&registry, env, &pretrained, cfg, |arm, k, r| {
        eprintln!(
            "seed {k} {arm:<10}  steps {:>7}  final return {:.4}",
            r.env_steps, r.final_eval.mean_return
        );
    })?;
    let mut metrics = run.metrics("metrics.jsonl")?;
    for p in &report.pairs {
        for (arm, r) in [("pretrained", &p.pretrained), ("scratch", &p.scratch)] {
            for s in &r.curve {
                metrics.push(&json!({
                    "arm": arm,
                    "seed_index": p.seed_index,
                    "iteration": s.iteration,
                    "env_steps": s.env_steps,
                    "mean_return": s.mean_return,
                    "success_rate": s.success_rate,
                }))?;
            }
        }
    }
    run.write("table.csv", &report.threshold_table_csv())?;
    run.write("curves.csv", &report.curves_csv())?;
    run.write("final_eval.csv", &report.final_eval_csv())?;
    write_json(&run.file("report.json"), &report)?;
    if cfg.finetune.total_env_steps == 0 {
        println!("evaluation only (budget 0)");
    }
    print!("{}", report.threshold_table_csv());
    Ok(())
}
