//! Parameters and the differentiable forward pass.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use super::config::{positional_encoding, ModelConfig};
use crate::error::{MadtError, Result};
use crate::numerics::{Graph, Tensor, Var, MASK_VALUE};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let e = cfg.n_embd;
    let f = cfg.ffn_dim();
    let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());
    let resid = Init::Normal(1.0 / ((f as f64).sqrt() * (2.0 * cfg.n_layer as f64).sqrt()));
    let mut v = vec![
        ("embed.weight".to_string(), vec![cfg.token_dim(), e], fan(cfg.token_dim())),
        ("embed.bias".to_string(), vec![e], Init::Zeros),
    ];
    for l in 0..cfg.n_layer {
        let p = |s: &str| format!("blocks.{l}.{s}");
        v.extend([
            (p("ln1.gain"), vec![e], Init::Ones),
            (p("ln1.bias"), vec![e], Init::Zeros),
            (p("attn.wq"), vec![e, e], fan(e)),
            (p("attn.bq"), vec![e], Init::Zeros),
            (p("attn.wk"), vec![e, e], fan(e)),
            (p("attn.bk"), vec![e], Init::Zeros),
            (p("attn.wv"), vec![e, e], fan(e)),
            (p("attn.bv"), vec![e], Init::Zeros),
            (p("attn.wo"), vec![e, e], resid),
            (p("attn.bo"), vec![e], Init::Zeros),
            (p("ln2.gain"), vec![e], Init::Ones),
            (p("ln2.bias"), vec![e], Init::Zeros),
            (p("ffn.w1"), vec![e, f], fan(e)),
            (p("ffn.b1"), vec![f], Init::Zeros),
            (p("ffn.w2"), vec![f, e], resid),
            (p("ffn.b2"), vec![e], Init::Zeros),
        ]);
    }
    v.extend([
        ("ln_f.gain".to_string(), vec![e], Init::Ones),
        ("ln_f.bias".to_string(), vec![e], Init::Zeros),
        ("head.action.weight".to_string(), vec![e, cfg.n_actions], Init::Normal(0.01)),
        ("head.action.bias".to_string(), vec![cfg.n_actions], Init::Zeros),
        ("head.value.weight".to_string(), vec![e, 1], Init::Zeros),
        ("head.value.bias".to_string(), vec![1], Init::Zeros),
    ]);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockIds {
    pub ln1: (usize, usize),
    pub q: (usize, usize),
    pub k: (usize, usize),
    pub v: (usize, usize),
    pub o: (usize, usize),
    pub ln2: (usize, usize),
    pub ff1: (usize, usize),
    pub ff2: (usize, usize),
}

/// Slot indices of each named parameter.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Ids {
    pub embed: (usize, usize),
    pub blocks: Vec<BlockIds>,
    pub ln_f: (usize, usize),
    pub action: (usize, usize),
    pub value: (usize, usize),
}

impl Ids {
    fn new(cfg: &ModelConfig, names: &[String]) -> Ids {
        let index: HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let at = |n: &str| index[n];
        let pair = |a: &str, b: &str| (at(a), at(b));
        Ids {
            embed: pair("embed.weight", "embed.bias"),
            blocks: (0..cfg.n_layer)
                .map(|l| {
                    let p = |s: &str| format!("blocks.{l}.{s}");
                    let pp = |a: &str, b: &str| (at(&p(a)), at(&p(b)));
                    BlockIds {
                        ln1: pp("ln1.gain", "ln1.bias"),
                        q: pp("attn.wq", "attn.bq"),
                        k: pp("attn.wk", "attn.bk"),
                        v: pp("attn.wv", "attn.bv"),
                        o: pp("attn.wo", "attn.bo"),
                        ln2: pp("ln2.gain", "ln2.bias"),
                        ff1: pp("ffn.w1", "ffn.b1"),
                        ff2: pp("ffn.w2", "ffn.b2"),
                    }
                })
                .collect(),
            ln_f: pair("ln_f.gain", "ln_f.bias"),
            action: pair("head.action.weight", "head.action.bias"),
            value: pair("head.value.weight", "head.value.bias"),
        }
    }
}

/// One shared parameter set for all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub(crate) ids: Ids,
}

/// One position of a context row.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextStep {
    pub token: Vec<f64>,
    /// Absolute environment timestep.
    pub timestep: usize,
    pub avail: Vec<bool>,
}

/// Row-major `[batch × len]` positions; rows shorter than `len` are padded
/// with invalid positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    pub batch: usize,
    pub len: usize,
    pub token_dim: usize,
    pub n_actions: usize,
    pub tokens: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub avail: Vec<bool>,
    pub valid: Vec<bool>,
}

impl ContextBatch {
    pub fn from_rows(rows: &[&[ContextStep]], token_dim: usize, n_actions: usize) -> Result<Self> {
        let len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let batch = rows.len();
        let n = batch * len;
        let mut b = ContextBatch {
            batch,
            len,
            token_dim,
            n_actions,
            tokens: vec![0.0; n * token_dim],
            timesteps: vec![0; n],
            avail: vec![true; n * n_actions],
            valid: vec![false; n],
        };
        for (r, row) in rows.iter().enumerate() {
            for (t, s) in row.iter().enumerate() {
                if s.token.len() != token_dim || s.avail.len() != n_actions {
                    return Err(MadtError::Dimension {
                        op: "context batch",
                        lhs: vec![s.token.len(), s.avail.len()],
                        rhs: vec![token_dim, n_actions],
                    });
                }
                let i = r * len + t;
                b.tokens[i * token_dim..(i + 1) * token_dim].copy_from_slice(&s.token);
                b.avail[i * n_actions..(i + 1) * n_actions].copy_from_slice(&s.avail);
                b.timesteps[i] = s.timestep;
                b.valid[i] = true;
            }
        }
        Ok(b)
    }

    pub fn avail_at(&self, i: usize) -> &[bool] {
        &self.avail[i * self.n_actions..(i + 1) * self.n_actions]
    }

    /// Additive mask over actions: `MASK_VALUE` on unavailable actions at
    /// valid positions, zero elsewhere.
    fn action_mask(&self) -> Result<Tensor> {
        let a = self.n_actions;
        let mut m = vec![0.0; self.batch * self.len * a];
        for i in 0..self.batch * self.len {
            if !self.valid[i] {
                continue;
            }
            let av = self.avail_at(i);
            if !av.iter().any(|&x| x) {
                return Err(MadtError::NoLegal(format!(
                    "row {} position {} has no available action",
                    i / self.len.max(1),
                    i % self.len.max(1)
                )));
            }
            for (j, &ok) in av.iter().enumerate() {
                if !ok {
                    m[i * a + j] = MASK_VALUE;
                }
            }
        }
        Tensor::new(vec![self.batch, self.len, a], m)
    }
}

/// Action logits `[B×T×A]` (unavailable entries carry the mask sentinel)
/// and values `[B×T]`.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    pub values: Var,
}

/// Graph handles for every parameter slot.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Model> {
        config.validate()?;
        let lay = layout(&config);
        let mut names = Vec::with_capacity(lay.len());
        let mut params = Vec::with_capacity(lay.len());
        for (name, shape, init) in lay {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal(std) => {
                    let d = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| d.sample(rng)).collect()
                }
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        let ids = Ids::new(&config, &names);
        Ok(Model {
            config,
            names,
            params,
            ids,
        })
    }

    /// Rebuilds a model from named tensors, checking every expected slot.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Model> {
        config.validate()?;
        let mut by_name: HashMap<String, Tensor> = named.into_iter().collect();
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, _) in layout(&config) {
            let t = by_name.remove(&name).ok_or_else(|| {
                MadtError::Contract(format!("checkpoint lacks parameter {name}"))
            })?;
            if t.shape() != shape.as_slice() {
                return Err(MadtError::Dimension {
                    op: "load parameter",
                    lhs: t.shape().to_vec(),
                    rhs: shape,
                });
            }
            names.push(name);
            params.push(t);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(MadtError::Contract(format!("unexpected parameter {extra}")));
        }
        let ids = Ids::new(&config, &names);
        Ok(Model {
            config,
            names,
            params,
            ids,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Registers parameters as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.param(p.clone())).collect(),
        }
    }

    /// Registers parameters as constants, for inference.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.constant(p.clone())).collect(),
        }
    }

    pub fn grads(&self, g: &Graph, b: &Bound) -> Vec<Vec<f64>> {
        b.vars.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }

    fn causal_mask(t: usize) -> Tensor {
        Tensor::from_fn(vec![t, t], |i| if i % t <= i / t { 0.0 } else { MASK_VALUE })
    }

    fn attention(&self, g: &mut Graph, b: &Bound, blk: &BlockIds, x: Var, bsz: usize, t: usize) -> Result<Var> {
        let cfg = &self.config;
        let (h, dk, e) = (cfg.n_head, cfg.head_dim(), cfg.n_embd);
        let v = |id: usize| b.vars[id];
        let heads = |g: &mut Graph, y: Var, key: bool| -> Result<Var> {
            let y = g.reshape(y, vec![bsz, t, h, dk])?;
            if key {
                let y = g.permute(y, &[0, 2, 3, 1])?;
                g.reshape(y, vec![bsz * h, dk, t])
            } else {
                let y = g.permute(y, &[0, 2, 1, 3])?;
                g.reshape(y, vec![bsz * h, t, dk])
            }
        };
        let q = g.linear(x, v(blk.q.0), Some(v(blk.q.1)))?;
        let k = g.linear(x, v(blk.k.0), Some(v(blk.k.1)))?;
        let val = g.linear(x, v(blk.v.0), Some(v(blk.v.1)))?;
        let q = heads(g, q, false)?;
        let kt = heads(g, k, true)?;
        let val = heads(g, val, false)?;
        let scores = g.bmm(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
        let att = g.masked_softmax(scores, &Self::causal_mask(t))?;
        let y = g.bmm(att, val)?;
        let y = g.reshape(y, vec![bsz, h, t, dk])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        let y = g.reshape(y, vec![bsz, t, e])?;
        g.linear(y, v(blk.o.0), Some(v(blk.o.1)))
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, batch: &ContextBatch) -> Result<Forward> {
        let cfg = &self.config;
        if batch.token_dim != cfg.token_dim() || batch.n_actions != cfg.n_actions {
            return Err(MadtError::Dimension {
                op: "forward",
                lhs: vec![batch.token_dim, batch.n_actions],
                rhs: vec![cfg.token_dim(), cfg.n_actions],
            });
        }
        if batch.batch == 0 || batch.len == 0 {
            return Err(MadtError::Contract("empty context batch".into()));
        }
        let (bsz, t, e) = (batch.batch, batch.len, cfg.n_embd);
        let v = |id: usize| b.vars[id];
        let mask = batch.action_mask()?;

        let mut pe = Vec::with_capacity(bsz * t * e);
        for &ts in &batch.timesteps {
            pe.extend(positional_encoding(ts, e, cfg.max_timestep)?);
        }
        let tokens = g.constant(Tensor::new(vec![bsz, t, batch.token_dim], batch.tokens.clone())?);
        let x = g.linear(tokens, v(self.ids.embed.0), Some(v(self.ids.embed.1)))?;
        let mut x = g.add_const(x, Tensor::new(vec![bsz, t, e], pe)?)?;

        for blk in &self.ids.blocks {
            let h = g.layer_norm(x, v(blk.ln1.0), v(blk.ln1.1))?;
            let a = self.attention(g, b, blk, h, bsz, t)?;
            x = g.add(x, a)?;
            let h = g.layer_norm(x, v(blk.ln2.0), v(blk.ln2.1))?;
            let h = g.linear(h, v(blk.ff1.0), Some(v(blk.ff1.1)))?;
            let h = g.relu(h);
            let h = g.linear(h, v(blk.ff2.0), Some(v(blk.ff2.1)))?;
            x = g.add(x, h)?;
        }
        let x = g.layer_norm(x, v(self.ids.ln_f.0), v(self.ids.ln_f.1))?;
        let logits = g.linear(x, v(self.ids.action.0), Some(v(self.ids.action.1)))?;
        let logits = g.add_const(logits, mask)?;
        let values = g.linear(x, v(self.ids.value.0), Some(v(self.ids.value.1)))?;
        let values = g.reshape(values, vec![bsz, t])?;
        Ok(Forward { logits, values })
    }

    /// Forward pass without gradient tracking; returns logits and values.
    pub fn infer(&self, batch: &ContextBatch) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let f = self.forward(&mut g, &b, batch)?;
        Ok((g.value(f.logits).clone(), g.value(f.values).clone()))
    }
}
