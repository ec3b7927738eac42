//! Straight-line inference with per-row key/value caches.
//!
//! Rollouts need one new position per agent per environment step. Re-running
//! the graph forward over the whole window each step is quadratic in the
//! window length, so collection uses this path instead. It computes the same
//! function as `Model::forward` and is tested against it.

use super::config::positional_encoding;
use super::network::Model;
use crate::error::{MadtError, Result};
use crate::numerics::{Tensor, LAYER_NORM_EPS, MASK_VALUE};

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = w.shape()[1];
    let mut out = b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w.data()[i * n..(i + 1) * n];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn layer_norm(x: &[f64], gain: &Tensor, bias: &Tensor) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(gain.data().iter().zip(bias.data()))
        .map(|(v, (g, b))| (v - mean) * rs * g + b)
        .collect()
}

#[derive(Debug, Clone, Default)]
struct RowCache {
    /// Per layer, keys and values of past positions, `[t × n_embd]` flat.
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

/// Incremental decoder over `rows` independent contexts.
pub struct Incremental<'a> {
    model: &'a Model,
    rows: Vec<RowCache>,
}

/// Raw (unmasked) action logits and the value estimate at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub value: f64,
}

impl<'a> Incremental<'a> {
    pub fn new(model: &'a Model, rows: usize) -> Self {
        let n_layer = model.config.n_layer;
        Incremental {
            model,
            rows: (0..rows)
                .map(|_| RowCache {
                    keys: vec![Vec::new(); n_layer],
                    values: vec![Vec::new(); n_layer],
                    len: 0,
                })
                .collect(),
        }
    }

    pub fn len(&self, row: usize) -> usize {
        self.rows[row].len
    }

    /// Starts a fresh context window for `row`.
    pub fn reset(&mut self, row: usize) {
        let c = &mut self.rows[row];
        c.keys.iter_mut().for_each(Vec::clear);
        c.values.iter_mut().for_each(Vec::clear);
        c.len = 0;
    }

    /// Appends one token to `row` and returns the output at that position.
    pub fn step(&mut self, row: usize, token: &[f64], timestep: usize) -> Result<StepOutput> {
        let m = self.model;
        let cfg = &m.config;
        if token.len() != cfg.token_dim() {
            return Err(MadtError::Dimension {
                op: "incremental step",
                lhs: vec![token.len()],
                rhs: vec![cfg.token_dim()],
            });
        }
        let p = m.params();
        let (e, h, dk) = (cfg.n_embd, cfg.n_head, cfg.head_dim());
        let cache = &mut self.rows[row];
        let t = cache.len;

        let mut x = affine(token, &p[m.ids.embed.0], &p[m.ids.embed.1]);
        for (xi, pe) in x.iter_mut().zip(positional_encoding(timestep, e, cfg.max_timestep)?) {
            *xi += pe;
        }
        for (l, blk) in m.ids.blocks.iter().enumerate() {
            let a = layer_norm(&x, &p[blk.ln1.0], &p[blk.ln1.1]);
            let q = affine(&a, &p[blk.q.0], &p[blk.q.1]);
            cache.keys[l].extend(affine(&a, &p[blk.k.0], &p[blk.k.1]));
            cache.values[l].extend(affine(&a, &p[blk.v.0], &p[blk.v.1]));
            let (keys, vals) = (&cache.keys[l], &cache.values[l]);
            let mut y = vec![0.0; e];
            let scale = 1.0 / (dk as f64).sqrt();
            for hd in 0..h {
                let off = hd * dk;
                let scores: Vec<f64> = (0..=t)
                    .map(|j| {
                        let k = &keys[j * e + off..j * e + off + dk];
                        q[off..off + dk].iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
                    })
                    .collect();
                let max = scores.iter().cloned().fold(MASK_VALUE, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = w.iter().sum();
                for (j, wj) in w.iter().enumerate() {
                    let v = &vals[j * e + off..j * e + off + dk];
                    for (yi, vi) in y[off..off + dk].iter_mut().zip(v) {
                        *yi += wj / z * vi;
                    }
                }
            }
            let o = affine(&y, &p[blk.o.0], &p[blk.o.1]);
            x.iter_mut().zip(o).for_each(|(xi, oi)| *xi += oi);
            let a = layer_norm(&x, &p[blk.ln2.0], &p[blk.ln2.1]);
            let mut f = affine(&a, &p[blk.ff1.0], &p[blk.ff1.1]);
            f.iter_mut().for_each(|v| *v = v.max(0.0));
            let f = affine(&f, &p[blk.ff2.0], &p[blk.ff2.1]);
            x.iter_mut().zip(f).for_each(|(xi, fi)| *xi += fi);
        }
        cache.len += 1;
        let x = layer_norm(&x, &p[m.ids.ln_f.0], &p[m.ids.ln_f.1]);
        let logits = affine(&x, &p[m.ids.action.0], &p[m.ids.action.1]);
        let value = affine(&x, &p[m.ids.value.0], &p[m.ids.value.1])[0];
        Ok(StepOutput { logits, value })
    }
}
