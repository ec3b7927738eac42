//! End-to-end acceptance suite. Criteria run one after another so that the
//! wall-clock limits are measured without competing tests on the same core.
//! Each prints one `[PASS]` / `[FAIL]` line.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use madt::cli::{compare, reference_return, median, RunConfig};
use madt::dataset::{
    decode, encode, generate, merge, record_episode, summarize, Dataset, UniversalDims,
};
use madt::env::{random_legal, GridEnv, Registry, ScriptedPolicy, Tier};
use madt::model::{
    masked_probs, positional_encoding, select_action, ActMode, Bound, ContextBatch, ContextStep,
    Model, ModelConfig,
};
use madt::numerics::{grad_check, grad_check_many, Graph, Tensor, Var, MASK_VALUE};
use madt::offline::{action_agreement, ce_loss, corpus_windows, pretrain, value_loss, OfflineConfig};
use madt::online::{
    clipped_surrogate, collect, compute_advantage, evaluate, finetune, ppo_update, rollout_env_seed,
    surrogate, CollectSpec, PpoConfig,
};
use madt::numerics::Adam;
use madt::rng::{derive_seed, rng_from_seed, Rng};

const SCENARIO: &str = "2a_2t";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn dims() -> UniversalDims {
    UniversalDims::covering(Registry::builtin().specs().iter())
}

fn randomize(model: &mut Model, std: f64, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let n = Normal::new(0.0, std).unwrap();
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = n.sample(&mut rng);
        }
    }
}

fn weighted_sum(g: &mut Graph, v: Var, rng: &mut Rng) -> Var {
    let shape = g.shape(v).to_vec();
    let w = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let p = g.mul_const(v, w).unwrap();
    g.sum(p)
}

/// Entries bounded away from zero and from each other's kinks.
fn away_from_kinks(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.2..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(101);
    let eps = 1e-6;
    let mut worst_op = (String::new(), 0.0f64);
    let mut note = |name: &str, err: f64| {
        if err > worst_op.1 || worst_op.0.is_empty() {
            worst_op = (name.to_string(), err);
        }
    };
    let x23 = away_from_kinks(vec![2, 3], &mut rng);
    let y23 = away_from_kinks(vec![2, 3], &mut rng);
    let w34 = away_from_kinks(vec![3, 4], &mut rng);
    let b4 = away_from_kinks(vec![4], &mut rng);
    let a234 = away_from_kinks(vec![2, 3, 4], &mut rng);
    let b243 = away_from_kinks(vec![2, 4, 3], &mut rng);
    let pos23 = Tensor::from_fn(vec![2, 3], |_| rng.gen_range(0.5..2.0));
    let seeds: Vec<u64> = (0..32).collect();
    let mut k = 0;
    let mut next = || {
        k += 1;
        rng_from_seed(seeds[k % seeds.len()] + 1000)
    };

    macro_rules! unary {
        ($name:expr, $x:expr, $body:expr) => {{
            let r = next();
            let e = grad_check(
                |g: &mut Graph, x: Var| {
                    let y = $body(g, x)?;
                    Ok(weighted_sum(g, y, &mut r.clone()))
                },
                &$x,
                eps,
            )
            .unwrap();
            note($name, e);
        }};
    }
    macro_rules! many {
        ($name:expr, $xs:expr, $body:expr) => {{
            let r = next();
            let e = grad_check_many(
                |g: &mut Graph, v: &[Var]| {
                    let y = $body(g, v)?;
                    Ok(weighted_sum(g, y, &mut r.clone()))
                },
                &$xs,
                eps,
            )
            .unwrap();
            note($name, e);
        }};
    }

    many!("matmul", [x23.clone(), w34.clone()], |g: &mut Graph, v: &[Var]| g.matmul(v[0], v[1]));
    many!("bmm", [a234.clone(), b243.clone()], |g: &mut Graph, v: &[Var]| g.bmm(v[0], v[1]));
    many!("linear", [x23.clone(), w34.clone(), b4.clone()], |g: &mut Graph, v: &[Var]| g
        .linear(v[0], v[1], Some(v[2])));
    many!("linear_nobias", [x23.clone(), w34.clone()], |g: &mut Graph, v: &[Var]| g
        .linear(v[0], v[1], None));
    many!("add", [x23.clone(), y23.clone()], |g: &mut Graph, v: &[Var]| g.add(v[0], v[1]));
    many!("sub", [x23.clone(), y23.clone()], |g: &mut Graph, v: &[Var]| g.sub(v[0], v[1]));
    many!("mul", [x23.clone(), y23.clone()], |g: &mut Graph, v: &[Var]| g.mul(v[0], v[1]));
    many!("minimum", [x23.clone(), y23.clone()], |g: &mut Graph, v: &[Var]| g.minimum(v[0], v[1]));
    let c23 = y23.clone();
    unary!("add_const", x23, |g: &mut Graph, x| g.add_const(x, c23.clone()));
    unary!("mul_const", x23, |g: &mut Graph, x| g.mul_const(x, c23.clone()));
    unary!("scale", x23, |g: &mut Graph, x| Ok::<_, madt::MadtError>(g.scale(x, -1.7)));
    unary!("relu", x23, |g: &mut Graph, x| Ok::<_, madt::MadtError>(g.relu(x)));
    unary!("exp", x23, |g: &mut Graph, x| Ok::<_, madt::MadtError>(g.exp(x)));
    unary!("log", pos23, |g: &mut Graph, x| Ok::<_, madt::MadtError>(g.log(x)));
    unary!("square", x23, |g: &mut Graph, x| Ok::<_, madt::MadtError>(g.square(x)));
    unary!("clamp", x23, |g: &mut Graph, x| Ok::<_, madt::MadtError>(g.clamp(x, -0.9, 0.95)));
    many!("layer_norm", [a234.clone(), b4.clone(), away_from_kinks(vec![4], &mut rng_from_seed(7))], |g: &mut Graph, v: &[Var]| g
        .layer_norm(v[0], v[1], v[2]));
    many!("concat", [x23.clone(), w34.clone()], |g: &mut Graph, v: &[Var]| {
        let t = g.reshape(v[1], vec![2, 6])?;
        g.concat(&[v[0], t])
    });
    unary!("slice", a234, |g: &mut Graph, x| g.slice(x, 1, 2));
    unary!("reshape", a234, |g: &mut Graph, x| g.reshape(x, vec![4, 6]));
    unary!("permute", a234, |g: &mut Graph, x| g.permute(x, &[2, 0, 1]));
    let mask = Tensor::vector(vec![0.0, MASK_VALUE, 0.0, 0.0]);
    unary!("masked_softmax", a234, |g: &mut Graph, x| g.masked_softmax(x, &mask));
    {
        // Excluded slots are constants of magnitude 1e9; give them zero weight.
        let e = grad_check(
            |g: &mut Graph, x: Var| {
                let y = g.masked_log_softmax(x, &mask)?;
                let w = Tensor::from_fn(vec![2, 3, 4], |i| if i % 4 == 1 { 0.0 } else { 0.3 + (i % 5) as f64 * 0.2 });
                let p = g.mul_const(y, w)?;
                Ok(g.sum(p))
            },
            &a234,
            eps,
        )
        .unwrap();
        note("masked_log_softmax", e);
    }
    unary!("gather", a234, |g: &mut Graph, x| g.gather(x, &[0, 3, 1, 2, 2, 0]));
    unary!("sum", a234, |g: &mut Graph, x| {
        let s = g.sum(x);
        Ok::<_, madt::MadtError>(g.square(s))
    });
    unary!("mean", a234, |g: &mut Graph, x| {
        let s = g.mean(x);
        Ok::<_, madt::MadtError>(g.square(s))
    });
    let ops_ok = worst_op.1 < 1e-4;

    // Whole network at the smallest configuration.
    let small = UniversalDims {
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
        ..ModelConfig::new(small)
    };
    let mut model = Model::init(cfg.clone(), &mut rng_from_seed(5)).unwrap();
    randomize(&mut model, 0.5, 6);
    let mut r = rng_from_seed(8);
    let step = |t: usize, agent: usize, avail: Vec<bool>, r: &mut Rng| ContextStep {
        token: cfg
            .token(
                &(0..3).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
                &(0..2).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
                agent,
                None,
            )
            .unwrap(),
        timestep: t,
        avail,
    };
    let row0 = vec![
        step(3, 0, vec![true, true, false, true], &mut r),
        step(4, 0, vec![true, false, true, true], &mut r),
    ];
    let row1 = vec![step(0, 1, vec![false, true, true, false], &mut r)];
    let batch = ContextBatch::from_rows(&[&row0, &row1], cfg.token_dim(), cfg.n_actions).unwrap();
    let targets = vec![1, 2, 2, 0];
    let returns = vec![0.4, -0.2, 0.7, 0.0];
    let ce_err = grad_check_many(
        |g: &mut Graph, v: &[Var]| {
            let b = Bound { vars: v.to_vec() };
            let f = model.forward(g, &b, &batch)?;
            ce_loss(g, f.logits, &targets, &batch)
        },
        model.params(),
        eps,
    )
    .unwrap();
    let both_err = grad_check_many(
        |g: &mut Graph, v: &[Var]| {
            let b = Bound { vars: v.to_vec() };
            let f = model.forward(g, &b, &batch)?;
            let ce = ce_loss(g, f.logits, &targets, &batch)?;
            let vl = value_loss(g, f.values, &returns, &batch)?;
            g.add(ce, vl)
        },
        model.params(),
        eps,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = ops_ok && ce_err < 1e-3 && both_err < 1e-3 && secs < 30.0;
    outcome(
        pass,
        format!(
            "gradients: worst op {} rel err {:.2e} (< 1e-4); network CE {:.2e}, CE+value {:.2e} (< 1e-3); {:.1}s (< 30s)",
            worst_op.0, worst_op.1, ce_err, both_err, secs
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random_avail(n: usize, rng: &mut Rng) -> Vec<bool> {
    loop {
        let v: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        if v.iter().any(|&b| b) {
            return v;
        }
    }
}

fn causality_trials(trials: usize) -> usize {
    let d = UniversalDims {
        state_dim: 4,
        obs_dim: 3,
        n_actions: 5,
        max_agents: 3,
    };
    let cfg = ModelConfig {
        n_layer: 2,
        n_head: 2,
        n_embd: 8,
        context_length: 6,
        max_timestep: 50,
        ..ModelConfig::new(d)
    };
    let mut passed = 0;
    let mut rng = rng_from_seed(202);
    for trial in 0..trials {
        let mut model = Model::init(cfg.clone(), &mut rng_from_seed(trial as u64)).unwrap();
        randomize(&mut model, 0.4, 10_000 + trial as u64);
        let t = rng.gen_range(2..=cfg.context_length);
        let t0 = rng.gen_range(0..20);
        let mk = |rng: &mut Rng, i: usize| ContextStep {
            token: (0..cfg.token_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            timestep: t0 + i,
            avail: random_avail(cfg.n_actions, rng),
        };
        let row: Vec<ContextStep> = (0..t).map(|i| mk(&mut rng, i)).collect();
        let other: Vec<ContextStep> = (0..t).map(|i| mk(&mut rng, i)).collect();
        let j = rng.gen_range(1..t);
        let mut changed = row.clone();
        for i in j..t {
            changed[i] = mk(&mut rng, i);
            changed[i].timestep = t0 + i + rng.gen_range(0..3);
        }
        let a = ContextBatch::from_rows(&[&row, &other], cfg.token_dim(), cfg.n_actions).unwrap();
        let b = ContextBatch::from_rows(&[&changed, &other], cfg.token_dim(), cfg.n_actions).unwrap();
        let (la, va) = model.infer(&a).unwrap();
        let (lb, vb) = model.infer(&b).unwrap();
        let na = cfg.n_actions;
        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let prefix_same = bits(&la.data()[..j * na]) == bits(&lb.data()[..j * na])
            && bits(&va.data()[..j]) == bits(&vb.data()[..j]);
        let other_same = bits(&la.data()[t * na..]) == bits(&lb.data()[t * na..])
            && bits(&va.data()[t..]) == bits(&vb.data()[t..]);
        passed += usize::from(prefix_same && other_same);
    }
    passed
}

fn illegal_samples(n: usize) -> usize {
    let model = Model::init(ModelConfig::new(dims()), &mut rng_from_seed(303)).unwrap();
    let cfg = model.config.clone();
    let mut rng = rng_from_seed(304);
    let mut illegal = 0;
    let per_row = 500;
    let mut drawn = 0;
    while drawn < n {
        let rows: Vec<Vec<ContextStep>> = (0..8)
            .map(|_| {
                (0..cfg.context_length)
                    .map(|i| ContextStep {
                        token: (0..cfg.token_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                        timestep: i,
                        avail: random_avail(cfg.n_actions, &mut rng),
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[ContextStep]> = rows.iter().map(|r| r.as_slice()).collect();
        let batch = ContextBatch::from_rows(&refs, cfg.token_dim(), cfg.n_actions).unwrap();
        let (logits, _) = model.infer(&batch).unwrap();
        let na = cfg.n_actions;
        for i in 0..batch.valid.len() {
            // Sharpen the logits so the illegal slots would dominate if unmasked.
            let row: Vec<f64> = logits.data()[i * na..(i + 1) * na].iter().map(|l| l * 50.0).collect();
            let avail = batch.avail_at(i);
            for _ in 0..per_row {
                let a = select_action(&row, avail, ActMode::Sample, &mut rng).unwrap();
                illegal += usize::from(!avail[a]);
                drawn += 1;
                if drawn == n {
                    return illegal;
                }
            }
        }
    }
    illegal
}

/// Probability mass on unavailable actions, recomputed with a plain softmax
/// over the network's masked logits, after each of `iterations` updates.
fn masked_mass_during_finetune(iterations: usize) -> (usize, usize, usize) {
    let registry = Registry::builtin();
    let def = registry.get(SCENARIO).unwrap();
    let mut model = Model::init(ModelConfig::new(dims()), &mut rng_from_seed(404)).unwrap();
    let cfg = PpoConfig {
        online_lr: 5e-4,
        ppo_epochs: 10,
        buffer_size: 4,
        ..PpoConfig::default()
    };
    let mut adam = Adam::new(cfg.online_lr, model.params());
    let (mut nonzero, mut checked, mut illegal_taken) = (0, 0, 0);
    let c = model.config.context_length;
    for it in 0..iterations {
        let mut buf = collect(
            def,
            &model,
            &CollectSpec {
                n_episodes: cfg.buffer_size,
                mode: ActMode::Sample,
                seed: derive_seed(405, "rollout", it as u64),
                step_budget: None,
                rtg_target: 1.0,
            },
        )
        .unwrap();
        compute_advantage(&mut buf, &cfg);
        ppo_update(&buf, &mut model, &mut adam, &cfg, &mut rng_from_seed(it as u64)).unwrap();
        let mut rows: Vec<Vec<ContextStep>> = Vec::new();
        for traj in &buf.trajectories {
            for s in &traj.steps {
                illegal_taken += usize::from(!s.avail[s.action]);
            }
            for chunk in traj.steps.chunks(c) {
                rows.push(
                    chunk
                        .iter()
                        .map(|s| ContextStep {
                            token: s.token.clone(),
                            timestep: s.timestep,
                            avail: s.avail.clone(),
                        })
                        .collect(),
                );
            }
        }
        let refs: Vec<&[ContextStep]> = rows.iter().map(|r| r.as_slice()).collect();
        let batch = ContextBatch::from_rows(&refs, model.config.token_dim(), model.config.n_actions).unwrap();
        let (logits, _) = model.infer(&batch).unwrap();
        let na = model.config.n_actions;
        for i in 0..batch.valid.len() {
            if !batch.valid[i] {
                continue;
            }
            let row = &logits.data()[i * na..(i + 1) * na];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let p = masked_probs(row, batch.avail_at(i)).unwrap();
            for a in 0..na {
                if !batch.avail_at(i)[a] {
                    checked += 1;
                    nonzero += usize::from(e[a] / z != 0.0 || p[a] != 0.0);
                }
            }
        }
    }
    (nonzero, checked, illegal_taken)
}

fn criterion_2() -> Outcome {
    let causal = causality_trials(1000);
    let illegal = illegal_samples(1_000_000);
    let (nonzero, checked, taken) = masked_mass_during_finetune(50);
    outcome(
        causal == 1000 && illegal == 0 && nonzero == 0 && taken == 0 && checked > 0,
        format!(
            "causality {causal}/1000 exact; {illegal} illegal of 1e6 samples; {nonzero} nonzero masked probs of {checked} over 50 updates ({taken} illegal rollout actions)"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    // Cross-entropy of a uniform policy over K legal actions.
    let mut ce_worst: f64 = 0.0;
    for k in 1..=8usize {
        let avail: Vec<bool> = (0..8).map(|a| a < k).collect();
        let row = vec![ContextStep {
            token: vec![0.0],
            timestep: 0,
            avail: avail.clone(),
        }];
        let batch = ContextBatch::from_rows(&[&row], 1, 8).unwrap();
        let mut g = Graph::new();
        let mask: Vec<f64> = avail.iter().map(|&a| if a { 0.0 } else { MASK_VALUE }).collect();
        let logits = g.constant(Tensor::new(vec![1, 1, 8], mask).unwrap());
        let loss = ce_loss(&mut g, logits, &[k - 1], &batch).unwrap();
        ce_worst = ce_worst.max((g.value(loss).item().unwrap() - (k as f64).ln()).abs());
    }

    // Positional encoding against the closed form.
    let d = 32;
    let mut pe_worst: f64 = 0.0;
    for pos in 0..=400usize {
        let pe = positional_encoding(pos, d, 400).unwrap();
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe_worst = pe_worst.max((pe[2 * i] - angle.sin()).abs());
            pe_worst = pe_worst.max((pe[2 * i + 1] - angle.cos()).abs());
        }
    }

    // Clipped surrogate on the graph against straight-line arithmetic.
    let n = 100_000;
    let mut rng = rng_from_seed(333);
    let mut mismatches = 0;
    let chunk = 1000;
    for _ in 0..n / chunk {
        let eps: Vec<f64> = (0..chunk).map(|_| rng.gen_range(0.0..0.5)).collect();
        let w: Vec<f64> = (0..chunk).map(|_| rng.gen_range(0.0..3.0)).collect();
        let a: Vec<f64> = (0..chunk).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for i in 0..chunk {
            let oracle = {
                let unclipped = w[i] * a[i];
                let lo = 1.0 - eps[i];
                let hi = 1.0 + eps[i];
                let wc = if w[i] < lo { lo } else if w[i] > hi { hi } else { w[i] };
                let clipped = wc * a[i];
                if unclipped < clipped {
                    unclipped
                } else {
                    clipped
                }
            };
            let mut g = Graph::new();
            let wv = g.param(Tensor::vector(vec![w[i]]));
            let s = surrogate(&mut g, wv, Tensor::vector(vec![a[i]]), eps[i]).unwrap();
            let graph = g.value(s).data()[0];
            let plain = clipped_surrogate(w[i], a[i], eps[i]);
            mismatches += usize::from(graph.to_bits() != oracle.to_bits() || plain.to_bits() != oracle.to_bits());
        }
    }
    outcome(
        ce_worst < 1e-9 && pe_worst < 1e-6 && mismatches == 0,
        format!(
            "CE vs ln K worst {ce_worst:.1e} (< 1e-9); positional encoding worst {pe_worst:.1e} (< 1e-6); surrogate mismatches {mismatches}/{n}"
        ),
    )
}

// ---------------------------------------------------------------- 4, 5, 8

struct OfflineRun {
    model: Model,
    secs: f64,
    train_accuracy: f64,
}

fn offline_model(tier: Tier, use_rtg: bool) -> OfflineRun {
    let registry = Registry::builtin();
    let ds = generate(&registry, SCENARIO, tier, 200, 41).unwrap();
    let data = merge(&[ds], dims(), None).unwrap();
    let mut model = Model::init(
        ModelConfig {
            use_rtg,
            ..ModelConfig::new(dims())
        },
        &mut rng_from_seed(42),
    )
    .unwrap();
    let cfg = OfflineConfig {
        learning_rate: 5e-4,
        epochs: 100,
        seed: 43,
        ..OfflineConfig::default()
    };
    let start = Instant::now();
    let report = pretrain(&data, &mut model, &cfg, |_| {}).unwrap();
    OfflineRun {
        model,
        secs: start.elapsed().as_secs_f64(),
        train_accuracy: report.final_accuracy(),
    }
}

/// Mean return of the scripted generator from the same start states that
/// `evaluate` uses for `seed`.
fn generator_return(tier: Tier, episodes: usize, seed: u64) -> f64 {
    let registry = Registry::builtin();
    let mut env = GridEnv::new(registry.get(SCENARIO).unwrap().clone()).unwrap();
    let rets: Vec<f64> = (0..episodes)
        .map(|k| {
            record_episode(&mut env, ScriptedPolicy::new(tier), rollout_env_seed(seed, k), k as u64, k)
                .unwrap()
                .team_return()
        })
        .collect();
    rets.iter().sum::<f64>() / episodes as f64
}

fn criterion_4(run: &OfflineRun) -> Outcome {
    let registry = Registry::builtin();
    let fresh = generate(&registry, SCENARIO, Tier::Good, 50, 44).unwrap();
    let data = merge(&[fresh], dims(), None).unwrap();
    let ws = corpus_windows(&data, &run.model, 0.99).unwrap();
    let agreement = action_agreement(&run.model, &ws, 128).unwrap();
    let eval = evaluate(registry.get(SCENARIO).unwrap(), &run.model, 32, ActMode::Greedy, 45, 1.0).unwrap();
    let generator = generator_return(Tier::Good, 32, 45);
    let ratio = eval.mean_return / generator;
    outcome(
        agreement >= 0.95 && ratio >= 0.90 && run.secs < 600.0,
        format!(
            "offline: held-out action agreement {:.4} (>= 0.95, train {:.4}); greedy return {:.3} vs generator {:.3} = {:.1}% (>= 90%); {:.0}s (< 600s)",
            agreement,
            run.train_accuracy,
            eval.mean_return,
            generator,
            100.0 * ratio,
            run.secs
        ),
    )
}

fn criterion_5(run: &OfflineRun) -> Outcome {
    let registry = Registry::builtin();
    let text = r#"
seed = 5
[finetune]
online_lr = 5e-4
online_ppo_epochs = 10
total_env_steps = 30000
stop_at_thresholds = true
[compare]
seeds = 5
threshold_fractions = [0.8]
reference_episodes = 100
"#;
    let cfg = RunConfig::parse(text, &[]).unwrap();
    let start = Instant::now();
    let report = compare(&registry, SCENARIO, &run.model, &cfg, |_, _, _| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let t = report.thresholds[0];
    let (scratch, pre) = report.median_steps(t);
    let pass = match (scratch, pre) {
        (Some(s), Some(p)) => p <= 0.5 * s && secs < 1800.0,
        _ => false,
    };
    let show = |v: Option<f64>| v.map_or("not reached".to_string(), |x| format!("{x:.0}"));
    outcome(
        pass,
        format!(
            "sample efficiency: threshold {:.3} (80% of good {:.3}); median steps pre-trained {} vs scratch {} (<= 50%); {:.0}s (< 1800s)",
            t,
            report.reference_return,
            show(pre),
            show(scratch),
            secs
        ),
    )
}

fn criterion_8(state_only: &OfflineRun) -> Outcome {
    let registry = Registry::builtin();
    let def = registry.get(SCENARIO).unwrap();
    let with_rtg = offline_model(Tier::Medium, true);
    let span = def.task_spec().reward_span();
    let target = reference_return(&registry, SCENARIO, 100, 81).unwrap() / span;
    let mut finals = [Vec::new(), Vec::new()];
    for (arm, base) in [&state_only.model, &with_rtg.model].into_iter().enumerate() {
        for k in 0..5u64 {
            let cfg = PpoConfig {
                online_lr: 5e-4,
                ppo_epochs: 10,
                total_env_steps: 6000,
                seed: derive_seed(82, "ablation", k),
                rtg_target: target,
                ..PpoConfig::default()
            };
            let mut m = base.clone();
            let r = finetune(def, &mut m, &cfg, None, |_| {}).unwrap();
            finals[arm].push(r.final_eval.mean_return);
        }
    }
    let (so, rtg) = (median(&finals[0]), median(&finals[1]));
    outcome(
        rtg <= so,
        format!(
            "rtg ablation (report only): median final return state-only {so:.3}, with rtg {rtg:.3}; direction {}",
            if rtg <= so { "holds" } else { "not reproduced" }
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

fn universal_model() -> (Model, f64) {
    let registry = Registry::builtin();
    let sets: Vec<Dataset> = registry
        .training_list()
        .iter()
        .map(|s| generate(&registry, s, Tier::Good, 200, 61).unwrap())
        .collect();
    let data = merge(&sets, dims(), None).unwrap();
    let mut model = Model::init(ModelConfig::new(dims()), &mut rng_from_seed(62)).unwrap();
    let cfg = OfflineConfig {
        learning_rate: 5e-4,
        epochs: 60,
        seed: 63,
        ..OfflineConfig::default()
    };
    let report = pretrain(&data, &mut model, &cfg, |_| {}).unwrap();
    (model, report.final_accuracy())
}

fn criterion_6(universal: &Model) -> Outcome {
    let registry = Registry::builtin();
    let mut wins = 0;
    let mut parts = Vec::new();
    for s in registry.training_list() {
        let def = registry.get(&s).unwrap();
        let (mut pre, mut scratch) = (Vec::new(), Vec::new());
        for k in 0..5u64 {
            let cfg = PpoConfig {
                online_lr: 1e-4,
                ppo_epochs: 5,
                total_env_steps: 2000,
                seed: derive_seed(64, &s, k),
                ..PpoConfig::default()
            };
            let mut m = universal.clone();
            pre.push(finetune(def, &mut m, &cfg, None, |_| {}).unwrap().final_eval.mean_return);
            let mut m = Model::init(universal.config.clone(), &mut rng_from_seed(derive_seed(65, &s, k))).unwrap();
            scratch.push(finetune(def, &mut m, &cfg, None, |_| {}).unwrap().final_eval.mean_return);
        }
        let (p, c) = (median(&pre), median(&scratch));
        wins += usize::from(p >= c);
        parts.push(format!("{s} {p:.2}/{c:.2}"));
    }
    outcome(
        wins >= 4,
        format!("few-shot: universal >= scratch on {wins}/5 (>= 4); median pre/scratch {}", parts.join(", ")),
    )
}

fn criterion_7(universal: &Model) -> Outcome {
    let registry = Registry::builtin();
    let hold = registry.holdout().to_string();
    let def = registry.get(&hold).unwrap();
    let mut env = GridEnv::new(def.clone()).unwrap();
    let mut rng = rng_from_seed(71);
    let rets: Vec<f64> = (0..1000u64)
        .map(|k| {
            let mut o = env.reset(derive_seed(72, "random-policy", k));
            let mut ret = 0.0;
            while !o.done {
                let a: Vec<usize> = o.avail.iter().map(|v| random_legal(v, &mut rng).unwrap()).collect();
                o = env.step(&a).unwrap();
                ret += o.reward;
            }
            ret
        })
        .collect();
    let n = rets.len() as f64;
    let mean = rets.iter().sum::<f64>() / n;
    let sd = (rets.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let zero_shot = evaluate(def, universal, 32, ActMode::Greedy, 73, 1.0).unwrap().mean_return;
    outcome(
        zero_shot >= mean + 3.0 * se,
        format!(
            "zero-shot on {hold}: greedy {zero_shot:.3} vs random {mean:.3} + 3 x se {se:.4} = {:.3}",
            mean + 3.0 * se
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let registry = Registry::builtin();
    let ids = registry.ids();

    // Round trip of at least 1e5 agent-timestep records.
    let mut records = 0usize;
    let mut mismatched = 0usize;
    let mut stat_worst: f64 = 0.0;
    let mut i = 0u64;
    while records < 100_000 {
        let s = &ids[i as usize % ids.len()];
        let tier = Tier::ALL[i as usize % 3];
        let ds = generate(&registry, s, tier, 60, 900 + i).unwrap();
        let bytes = encode(&ds).unwrap();
        let back = decode(&bytes, std::path::Path::new("<memory>")).unwrap();
        let again = encode(&back).unwrap();
        let same_bits = back.manifest == ds.manifest
            && back.task == ds.task
            && again == bytes
            && ds.trajectories().zip(back.trajectories()).all(|(a, b)| {
                a.records.len() == b.records.len()
                    && a.records.iter().zip(&b.records).all(|(x, y)| {
                        let fb = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
                        fb(&x.state) == fb(&y.state)
                            && fb(&x.obs) == fb(&y.obs)
                            && x.reward.to_bits() == y.reward.to_bits()
                            && x.action == y.action
                            && x.done == y.done
                            && x.avail == y.avail
                    })
            });
        let n: usize = ds.trajectories().map(|t| t.len()).sum();
        records += n;
        mismatched += usize::from(!same_bits);

        // Two-pass statistics.
        let rets = ds.returns();
        let m = rets.iter().sum::<f64>() / rets.len() as f64;
        let sd = (rets.iter().map(|r| (r - m).powi(2)).sum::<f64>() / rets.len() as f64).sqrt();
        stat_worst = stat_worst
            .max((m - back.manifest.reward_mean).abs())
            .max((sd - back.manifest.reward_std).abs());
        if n != back.manifest.n_samples {
            stat_worst = f64::INFINITY;
        }
        i += 1;
    }

    // Tier ordering, pooled over 100 generator seeds per tier.
    let mut ordered = 0;
    let mut worst_gap = f64::INFINITY;
    for s in &ids {
        let means: Vec<f64> = Tier::ALL
            .iter()
            .map(|&t| {
                let mut rets = Vec::new();
                for seed in 0..100u64 {
                    rets.extend(generate(&registry, s, t, 10, seed).unwrap().returns());
                }
                summarize(&rets).mean
            })
            .collect();
        ordered += usize::from(means[0] < means[1] && means[1] < means[2]);
        worst_gap = worst_gap.min(means[1] - means[0]).min(means[2] - means[1]);
    }
    outcome(
        mismatched == 0 && stat_worst < 1e-9 && ordered == ids.len(),
        format!(
            "dataset: {records} records round-tripped, {mismatched} mismatching files; manifest vs two-pass worst {stat_worst:.1e} (< 1e-9); tier order holds on {ordered}/{} scenarios (smallest gap {worst_gap:.4})",
            ids.len()
        ),
    )
}

// ---------------------------------------------------------------- driver

fn run(n: usize, fatal: bool, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        outcome(false, format!("aborted: {msg}"))
    });
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let suffix = if fatal || o.pass { "" } else { " (non-fatal)" };
    say(&format!(
        "[{tag}] criterion {n}: {} [{:.0}s]{suffix}",
        o.detail,
        start.elapsed().as_secs_f64()
    ));
    o.pass || !fatal
}

#[test]
fn acceptance_criteria() {
    let mut ok = true;
    ok &= run(1, true, criterion_1);
    ok &= run(2, true, criterion_2);
    ok &= run(3, true, criterion_3);
    let offline = catch_unwind(|| offline_model(Tier::Good, false)).ok();
    ok &= run(4, true, || criterion_4(offline.as_ref().expect("offline pre-training failed")));
    ok &= run(5, true, || criterion_5(offline.as_ref().expect("offline pre-training failed")));
    let universal = catch_unwind(universal_model).ok();
    if let Some((_, acc)) = &universal {
        say(&format!("universal model training accuracy {acc:.4}"));
    }
    ok &= run(6, true, || criterion_6(&universal.as_ref().expect("universal pre-training failed").0));
    ok &= run(7, true, || criterion_7(&universal.as_ref().expect("universal pre-training failed").0));
    let medium = catch_unwind(|| offline_model(Tier::Medium, false)).ok();
    ok &= run(8, false, || criterion_8(medium.as_ref().expect("offline pre-training failed")));
    ok &= run(9, true, criterion_9);
    assert!(ok, "at least one acceptance criterion failed");
}
