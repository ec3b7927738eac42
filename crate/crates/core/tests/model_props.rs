use proptest::prelude::*;
use rand::Rng as _;

use madt::dataset::UniversalDims;
use madt::model::{select_action, ActMode, ContextBatch, ContextStep, Incremental, Model, ModelConfig};
use madt::rng::rng_from_seed;

fn model(n_layer: usize, n_head: usize, n_embd: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        n_layer,
        n_head,
        n_embd,
        context_length: 8,
        max_timestep: 60,
        ..ModelConfig::new(UniversalDims {
            state_dim: 4,
            obs_dim: 3,
            n_actions: 6,
            max_agents: 3,
        })
    };
    let mut m = Model::init(cfg, &mut rng_from_seed(seed)).unwrap();
    let mut rng = rng_from_seed(seed + 1);
    for p in m.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    m
}

fn rows(m: &Model, n: usize, len: usize, seed: u64) -> Vec<Vec<ContextStep>> {
    let mut rng = rng_from_seed(seed);
    let cfg = &m.config;
    (0..n)
        .map(|_| {
            let t0 = rng.gen_range(0..30);
            (0..len)
                .map(|t| {
                    let mut avail: Vec<bool> = (0..cfg.n_actions).map(|_| rng.gen_bool(0.5)).collect();
                    let keep = rng.gen_range(0..cfg.n_actions);
                    avail[keep] = true;
                    let agent = rng.gen_range(0..cfg.max_agents);
                    let state: Vec<f64> = (0..cfg.state_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let obs: Vec<f64> = (0..cfg.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    ContextStep {
                        token: cfg.token(&state, &obs, agent, None).unwrap(),
                        timestep: t0 + t,
                        avail,
                    }
                })
                .collect()
        })
        .collect()
}

fn batch(m: &Model, rows: &[Vec<ContextStep>]) -> ContextBatch {
    let refs: Vec<&[ContextStep]> = rows.iter().map(|r| r.as_slice()).collect();
    ContextBatch::from_rows(&refs, m.config.token_dim(), m.config.n_actions).unwrap()
}

fn arch() -> impl Strategy<Value = (usize, usize, usize)> {
    prop_oneof![Just((1, 1, 4)), Just((2, 2, 8)), Just((1, 4, 8)), Just((3, 2, 12))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn perturbing_later_positions_leaves_earlier_outputs_exact(
        (l, h, e) in arch(),
        seed in 0u64..10_000,
        len in 2usize..=8,
        cut in 1usize..8,
    ) {
        let cut = cut.min(len - 1);
        let m = model(l, h, e, seed);
        let base = rows(&m, 1, len, seed);
        let mut changed = base.clone();
        let noise = rows(&m, 1, len, seed + 7);
        for t in cut..len {
            changed[0][t].token = noise[0][t].token.clone();
            changed[0][t].avail = noise[0][t].avail.clone();
        }
        let (la, va) = m.infer(&batch(&m, &base)).unwrap();
        let (lb, vb) = m.infer(&batch(&m, &changed)).unwrap();
        let a = m.config.n_actions;
        let bits = |d: &[f64]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&la.data()[..cut * a]), bits(&lb.data()[..cut * a]));
        prop_assert_eq!(bits(&va.data()[..cut]), bits(&vb.data()[..cut]));
    }

    #[test]
    fn greedy_action_ignores_constant_shift(
        logits in prop::collection::vec(-5.0f64..5.0, 6),
        avail in prop::collection::vec(any::<bool>(), 6),
        shift in -100.0f64..100.0,
    ) {
        let mut avail = avail;
        avail[5] = true;
        let shifted: Vec<f64> = logits.iter().zip(&avail).map(|(l, &ok)| if ok { l + shift } else { *l }).collect();
        let mut rng = rng_from_seed(0);
        let a = select_action(&logits, &avail, ActMode::Greedy, &mut rng).unwrap();
        let b = select_action(&shifted, &avail, ActMode::Greedy, &mut rng).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(avail[a]);
    }

    #[test]
    fn identical_inputs_give_identical_outputs_across_rows(seed in 0u64..10_000, len in 1usize..=8) {
        let m = model(2, 2, 8, seed);
        let r = rows(&m, 1, len, seed);
        let both = vec![r[0].clone(), r[0].clone()];
        let (l, v) = m.infer(&batch(&m, &both)).unwrap();
        let a = m.config.n_actions;
        prop_assert_eq!(&l.data()[..len * a], &l.data()[len * a..]);
        prop_assert_eq!(&v.data()[..len], &v.data()[len..]);
    }

    #[test]
    fn incremental_decoding_matches_full_forward((l, h, e) in arch(), seed in 0u64..10_000, len in 1usize..=8) {
        let m = model(l, h, e, seed);
        let rs = rows(&m, 2, len, seed);
        let (logits, values) = m.infer(&batch(&m, &rs)).unwrap();
        let mut inc = Incremental::new(&m, 2);
        let a = m.config.n_actions;
        for (r, row) in rs.iter().enumerate() {
            for (t, s) in row.iter().enumerate() {
                let out = inc.step(r, &s.token, s.timestep).unwrap();
                let i = r * len + t;
                for j in 0..a {
                    if s.avail[j] {
                        prop_assert!((logits.data()[i * a + j] - out.logits[j]).abs() < 1e-10);
                    }
                }
                prop_assert!((values.data()[i] - out.value).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn sampling_never_returns_an_unavailable_action() {
    let mut rng = rng_from_seed(1);
    for _ in 0..200_000 {
        let avail: Vec<bool> = (0..7).map(|_| rng.gen_bool(0.3)).collect();
        if !avail.iter().any(|&a| a) {
            continue;
        }
        let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let a = select_action(&logits, &avail, ActMode::Sample, &mut rng).unwrap();
        assert!(avail[a]);
    }
}

#[test]
fn positions_past_max_timestep_are_rejected() {
    let m = model(1, 1, 4, 0);
    let mut r = rows(&m, 1, 2, 0);
    r[0][1].timestep = m.config.max_timestep + 1;
    assert!(m.infer(&batch(&m, &r)).is_err());
}
