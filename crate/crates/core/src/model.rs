//! Decoder-only conditional transformer.
//!
//! Each layer applies, with post-layernorm residuals:
//!
//! ```text
//! z1 = LN(z  + MHA(z,  z,  z))      causal self-attention
//! z2 = LN(z1 + MHA(z1, ec, ec))     cross-attention over condition slots
//! z' = LN(z2 + FFN(z2))             FFN(x) = relu(x W1 + b1) W2 + b2
//! ```
//!
//! `ec` holds the `m` learned slots of the requested condition. Condition 0
//! means "no condition" and its slots stay exactly zero, in which case the
//! cross-attention output is exactly zero and the sublayer is `LN(z1)`.

use std::sync::Arc;

use molforge_tensor::kernels::{layernorm_rows, linear, softmax_rows};
use molforge_tensor::{rng, Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub n_conditions: usize,
    #[serde(default = "one")]
    pub n_condition_slots: usize,
    #[serde(default)]
    pub precision: Precision,
}

fn one() -> usize {
    1
}

impl ModelConfig {
    /// 4 layers, 8 heads, d_model 256, d_ffn 1024, max_len 128.
    pub fn default_for(vocab_size: usize, n_conditions: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 8,
            d_model: 256,
            d_ffn: 1024,
            max_len: 128,
            vocab_size,
            n_conditions,
            n_condition_slots: 1,
            precision: Precision::F32,
        }
    }

    /// 2 layers, 2 heads, d_model 16, d_ffn 64.
    pub fn test_config(vocab_size: usize, n_conditions: usize, max_len: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ffn: 64,
            max_len,
            ..Self::default_for(vocab_size, n_conditions)
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return fail("d_model must be a positive multiple of n_heads");
        }
        if self.vocab_size < 5 {
            return fail("vocab_size must be at least 5");
        }
        if self.n_conditions == 0 || self.n_condition_slots == 0 {
            return fail("n_conditions and n_condition_slots must be at least 1");
        }
        if self.max_len < 2 || self.d_ffn == 0 {
            return fail("max_len must be at least 2 and d_ffn positive");
        }
        Ok(())
    }

    /// Every parameter tensor as (name, shape), in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (self.d_model, self.d_ffn, self.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![self.max_len, d]),
            ("cond_emb".to_string(), vec![self.n_conditions, self.n_condition_slots, d]),
        ];
        for l in 0..self.n_layers {
            let mut add = |name: &str, shape: Vec<usize>| out.push((format!("layer{l}.{name}"), shape));
            for (block, ln) in [("self", "ln1"), ("cross", "ln2")] {
                for w in ["wq", "wk", "wv", "wo"] {
                    add(&format!("{block}.{w}"), vec![d, d]);
                }
                add(&format!("{ln}.gamma"), vec![d]);
                add(&format!("{ln}.beta"), vec![d]);
            }
            add("ffn.w1", vec![d, f]);
            add("ffn.b1", vec![f]);
            add("ffn.w2", vec![f, d]);
            add("ffn.b2", vec![d]);
            add("ln3.gamma", vec![d]);
            add("ln3.beta", vec![d]);
        }
        out.push(("head.w".to_string(), vec![d, v]));
        out.push(("head.b".to_string(), vec![v]));
        out
    }
}

/// Exact number of learnable scalars.
pub fn count_params(config: &ModelConfig) -> usize {
    config.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

pub(crate) const TOK: usize = 0;
pub(crate) const POS: usize = 1;
pub const COND: usize = 2;
const PER_LAYER: usize = 18;

/// Indices of one layer's tensors.
struct LayerIx {
    self_w: [usize; 4],
    ln1: (usize, usize),
    cross_w: [usize; 4],
    ln2: (usize, usize),
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln3: (usize, usize),
}

impl LayerIx {
    fn new(l: usize) -> Self {
        let b = 3 + l * PER_LAYER;
        LayerIx {
            self_w: [b, b + 1, b + 2, b + 3],
            ln1: (b + 4, b + 5),
            cross_w: [b + 6, b + 7, b + 8, b + 9],
            ln2: (b + 10, b + 11),
            w1: b + 12,
            b1: b + 13,
            w2: b + 14,
            b2: b + 15,
            ln3: (b + 16, b + 17),
        }
    }
}

/// Which cross-attention sublayer a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossMode {
    /// `LN(z + MHA(z, ec, ec))`.
    Attend,
    /// `LN(z)`: the sublayer with the attention removed.
    LayerNormOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Random initialization: embeddings and linear maps from Normal(0, 0.02),
    /// layernorm at identity, biases zero, condition row 0 zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = config
            .layout()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let mut r = rng::stream(seed, i as u64);
                if name.ends_with(".gamma") {
                    Tensor::full(&shape, T::one())
                } else if name.ends_with(".beta") || name.ends_with(".b1") || name.ends_with(".b2") || name == "head.b" {
                    Tensor::zeros(&shape)
                } else {
                    rng::normal_tensor(&mut r, &shape, 0.02)
                }
            })
            .collect();
        let mut model = Model { config, params };
        model.zero_condition_row();
        Ok(model)
    }

    pub fn from_parts(config: ModelConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "{} tensors for a layout of {}",
                params.len(),
                layout.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.config.layout().into_iter().map(|(n, _)| n).collect()
    }

    /// Number of leading `cond_emb` scalars that belong to condition 0.
    pub(crate) fn condition_row0_len(&self) -> usize {
        self.config.n_condition_slots * self.config.d_model
    }

    pub(crate) fn zero_condition_row(&mut self) {
        let n = self.condition_row0_len();
        for x in &mut self.params[COND].data_mut()[..n] {
            *x = T::zero();
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_inputs(&self, tokens: &[usize], batch: usize, len: usize, conds: &[usize]) -> Result<()> {
        let c = &self.config;
        if len > c.max_len {
            return Err(Error::LengthOverflow { len, max: c.max_len });
        }
        if tokens.len() != batch * len || conds.len() != batch || len == 0 {
            return Err(Error::InvalidConfig(format!(
                "{} tokens and {} conditions for batch {batch} x {len}",
                tokens.len(),
                conds.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::UnknownId(bad));
        }
        if let Some(&bad) = conds.iter().find(|&&k| k >= c.n_conditions) {
            return Err(Error::UnknownCondition {
                id: bad,
                count: c.n_conditions,
            });
        }
        Ok(())
    }

    /// Places every parameter on the graph; `trainable(i)` decides whether
    /// tensor `i` receives a gradient.
    pub fn bind(&self, g: &mut Graph<T>, trainable: impl Fn(usize) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if trainable(i) {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    /// Logits `[batch, len, vocab]` for row-major `tokens [batch, len]`.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        tokens: &[usize],
        batch: usize,
        len: usize,
        conds: &[usize],
        cross: CrossMode,
    ) -> Result<Var> {
        self.check_inputs(tokens, batch, len, conds)?;
        let c = &self.config;
        let d = c.d_model;
        let tok = g.embedding_lookup(p[TOK], tokens)?;
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let pos = g.embedding_lookup(p[POS], &positions)?;
        let x = g.add(tok, pos)?;
        let mut x = g.reshape(x, &[batch, len, d])?;

        let m = c.n_condition_slots;
        let table = g.reshape(p[COND], &[c.n_conditions * m, d])?;
        let slots: Vec<usize> = conds.iter().flat_map(|&k| (0..m).map(move |s| k * m + s)).collect();
        let mem = g.embedding_lookup(table, &slots)?;
        let mem = g.reshape(mem, &[batch, m, d])?;
        let mask = causal_mask(len);

        for l in 0..c.n_layers {
            let ix = LayerIx::new(l);
            let w = ix.self_w.map(|i| p[i]);
            let a = multi_head_attention(g, x, x, w, c.n_heads, Some(mask.clone()))?;
            let r = g.add(x, a)?;
            x = g.layernorm_last_axis(r, p[ix.ln1.0], p[ix.ln1.1])?;

            let r = match cross {
                CrossMode::Attend => {
                    let w = ix.cross_w.map(|i| p[i]);
                    let a = multi_head_attention(g, x, mem, w, c.n_heads, None)?;
                    g.add(x, a)?
                }
                CrossMode::LayerNormOnly => x,
            };
            x = g.layernorm_last_axis(r, p[ix.ln2.0], p[ix.ln2.1])?;

            let h = g.matmul(x, p[ix.w1])?;
            let h = g.add_bias(h, p[ix.b1])?;
            let h = g.relu(h);
            let f = g.matmul(h, p[ix.w2])?;
            let f = g.add_bias(f, p[ix.b2])?;
            let r = g.add(x, f)?;
            x = g.layernorm_last_axis(r, p[ix.ln3.0], p[ix.ln3.1])?;
        }
        let head = self.params.len() - 2;
        let logits = g.matmul(x, p[head])?;
        Ok(g.add_bias(logits, p[head + 1])?)
    }

    /// Forward pass without gradients.
    pub fn logits(&self, tokens: &[usize], batch: usize, len: usize, conds: &[usize]) -> Result<Tensor<T>> {
        self.logits_with(tokens, batch, len, conds, CrossMode::Attend)
    }

    pub fn logits_with(
        &self,
        tokens: &[usize],
        batch: usize,
        len: usize,
        conds: &[usize],
        cross: CrossMode,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, |_| false);
        let out = self.forward_graph(&mut g, &p, tokens, batch, len, conds, cross)?;
        Ok(g.value(out).clone())
    }

    /// Tape-free decoder that feeds one position at a time, caching
    /// self-attention keys and values.
    pub fn incremental(&self, conds: &[usize]) -> Result<IncrementalDecoder<'_, T>> {
        IncrementalDecoder::new(self, conds)
    }
}

/// `mask[i * len + j]` is true where query `i` may not see key `j`.
pub fn causal_mask(len: usize) -> Arc<[bool]> {
    (0..len * len).map(|k| k % len > k / len).collect::<Vec<_>>().into()
}

/// Multi-head attention `concat(softmax(Q_i K_i^T / sqrt(d_k)) V_i) W^O`
/// with `Q = q_in W^Q`, `K = kv_in W^K`, `V = kv_in W^V`. Inputs are
/// `[batch, len, d_model]`; `w` is `[W^Q, W^K, W^V, W^O]`.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    q_in: Var,
    kv_in: Var,
    w: [Var; 4],
    n_heads: usize,
    mask: Option<Arc<[bool]>>,
) -> Result<Var> {
    let (batch, lq, d) = dims3(g.shape(q_in));
    let lk = g.shape(kv_in)[1];
    let dk = d / n_heads;
    if lk == 1 && mask.is_none() {
        // A single key gets softmax weight exactly one in every head.
        let v = g.matmul(kv_in, w[2])?;
        let o = g.matmul(v, w[3])?;
        let o = g.reshape(o, &[batch, d])?;
        let rows: Vec<usize> = (0..batch).flat_map(|b| std::iter::repeat_n(b, lq)).collect();
        let o = g.embedding_lookup(o, &rows)?;
        return Ok(g.reshape(o, &[batch, lq, d])?);
    }
    let split = |g: &mut Graph<T>, x: Var, l: usize| -> Result<Var> {
        let x = g.reshape(x, &[batch, l, n_heads, dk])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        Ok(g.reshape(x, &[batch * n_heads, l, dk])?)
    };
    let q = g.matmul(q_in, w[0])?;
    let q = split(g, q, lq)?;
    let k = g.matmul(kv_in, w[1])?;
    let k = split(g, k, lk)?;
    let v = g.matmul(kv_in, w[2])?;
    let v = split(g, v, lk)?;
    let s = g.bmm(q, k, true)?;
    let s = g.scale(s, T::one() / T::of(dk as f64).sqrt());
    let s = match mask {
        Some(m) => g.masked_fill(s, m)?,
        None => s,
    };
    let attn = g.softmax_last_axis(s);
    let o = g.bmm(attn, v, false)?;
    let o = g.reshape(o, &[batch, n_heads, lq, dk])?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    let o = g.reshape(o, &[batch, lq, d])?;
    Ok(g.matmul(o, w[3])?)
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    (s[0], s[1], s[2])
}

/// Incremental decoding state for a fixed batch of conditions.
pub struct IncrementalDecoder<'m, T> {
    model: &'m Model<T>,
    batch: usize,
    pos: usize,
    // Per layer, [batch, heads, max_len, d_k].
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    // Per layer, [batch, heads, slots, d_k].
    cross_keys: Vec<Vec<T>>,
    cross_values: Vec<Vec<T>>,
}

impl<'m, T: Scalar> IncrementalDecoder<'m, T> {
    fn new(model: &'m Model<T>, conds: &[usize]) -> Result<Self> {
        let c = &model.config;
        let batch = conds.len();
        model.check_inputs(&vec![0; batch], batch, 1, conds)?;
        let (d, h, m) = (c.d_model, c.n_heads, c.n_condition_slots);
        let table = model.params[COND].data();
        let mem: Vec<T> = conds
            .iter()
            .flat_map(|&k| table[k * m * d..(k + 1) * m * d].iter().copied())
            .collect();
        let mut cross_keys = Vec::new();
        let mut cross_values = Vec::new();
        for l in 0..c.n_layers {
            let ix = LayerIx::new(l);
            let k = linear(&mem, model.params[ix.cross_w[1]].data(), None, d, d);
            let v = linear(&mem, model.params[ix.cross_w[2]].data(), None, d, d);
            cross_keys.push(to_heads(&k, batch, m, h));
            cross_values.push(to_heads(&v, batch, m, h));
        }
        let cache = batch * h * c.max_len * c.d_k();
        Ok(IncrementalDecoder {
            model,
            batch,
            pos: 0,
            keys: vec![vec![T::zero(); cache]; c.n_layers],
            values: vec![vec![T::zero(); cache]; c.n_layers],
            cross_keys,
            cross_values,
        })
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds one token per batch row; returns logits `[batch, vocab]` for
    /// the next position.
    pub fn step(&mut self, tokens: &[usize]) -> Result<Vec<T>> {
        let model = self.model;
        let c = &model.config;
        let p = &model.params;
        let (b, d, h, dk) = (self.batch, c.d_model, c.n_heads, c.d_k());
        if self.pos >= c.max_len {
            return Err(Error::LengthOverflow {
                len: self.pos + 1,
                max: c.max_len,
            });
        }
        model.check_inputs(tokens, b, 1, &vec![0; b])?;
        let (tok, pos) = (p[TOK].data(), p[POS].data());
        let at = self.pos * d;
        let mut x: Vec<T> = tokens
            .iter()
            .flat_map(|&t| (0..d).map(move |j| tok[t * d + j] + pos[at + j]))
            .collect();
        let scale = T::one() / T::of(dk as f64).sqrt();
        let t = self.pos;
        for l in 0..c.n_layers {
            let ix = LayerIx::new(l);
            let q = linear(&x, p[ix.self_w[0]].data(), None, d, d);
            let k = linear(&x, p[ix.self_w[1]].data(), None, d, d);
            let v = linear(&x, p[ix.self_w[2]].data(), None, d, d);
            let stride = c.max_len * dk;
            for bi in 0..b {
                for hi in 0..h {
                    let base = (bi * h + hi) * stride + t * dk;
                    let src = bi * d + hi * dk;
                    self.keys[l][base..base + dk].copy_from_slice(&k[src..src + dk]);
                    self.values[l][base..base + dk].copy_from_slice(&v[src..src + dk]);
                }
            }
            let o = attend(&q, &self.keys[l], &self.values[l], b, h, dk, t + 1, stride, scale);
            let a = linear(&o, p[ix.self_w[3]].data(), None, d, d);
            x = residual_norm(&x, &a, p[ix.ln1.0].data(), p[ix.ln1.1].data());

            let m = c.n_condition_slots;
            let q = linear(&x, p[ix.cross_w[0]].data(), None, d, d);
            let o = attend(&q, &self.cross_keys[l], &self.cross_values[l], b, h, dk, m, m * dk, scale);
            let a = linear(&o, p[ix.cross_w[3]].data(), None, d, d);
            x = residual_norm(&x, &a, p[ix.ln2.0].data(), p[ix.ln2.1].data());

            let mut hid = linear(&x, p[ix.w1].data(), Some(p[ix.b1].data()), d, c.d_ffn);
            for v in &mut hid {
                *v = v.max(T::zero());
            }
            let f = linear(&hid, p[ix.w2].data(), Some(p[ix.b2].data()), c.d_ffn, d);
            x = residual_norm(&x, &f, p[ix.ln3.0].data(), p[ix.ln3.1].data());
        }
        self.pos += 1;
        let head = p.len() - 2;
        Ok(linear(&x, p[head].data(), Some(p[head + 1].data()), d, c.vocab_size))
    }
}

/// `[rows * slots, d]` to `[rows, heads, slots, d_k]`.
fn to_heads<T: Scalar>(x: &[T], rows: usize, slots: usize, heads: usize) -> Vec<T> {
    let d = x.len() / (rows * slots);
    let dk = d / heads;
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for s in 0..slots {
            for hi in 0..heads {
                let dst = ((r * heads + hi) * slots + s) * dk;
                let src = (r * slots + s) * d + hi * dk;
                out[dst..dst + dk].copy_from_slice(&x[src..src + dk]);
            }
        }
    }
    out
}

/// Single-query attention of `q [b, h*dk]` over the first `n` cached rows
/// of each `(row, head)` block of `keys`/`values`.
#[allow(clippy::too_many_arguments)]
fn attend<T: Scalar>(
    q: &[T],
    keys: &[T],
    values: &[T],
    b: usize,
    h: usize,
    dk: usize,
    n: usize,
    stride: usize,
    scale: T,
) -> Vec<T> {
    let d = h * dk;
    let mut out = vec![T::zero(); b * d];
    let mut scores = vec![T::zero(); n];
    for bi in 0..b {
        for hi in 0..h {
            let qv = &q[bi * d + hi * dk..bi * d + (hi + 1) * dk];
            let block = (bi * h + hi) * stride;
            for (j, s) in scores.iter_mut().enumerate() {
                let kv = &keys[block + j * dk..block + (j + 1) * dk];
                *s = qv.iter().zip(kv).map(|(&a, &b)| a * b).sum::<T>() * scale;
            }
            softmax_rows(&mut scores, n);
            let o = &mut out[bi * d + hi * dk..bi * d + (hi + 1) * dk];
            for (j, &w) in scores.iter().enumerate() {
                let vv = &values[block + j * dk..block + (j + 1) * dk];
                for (o, &v) in o.iter_mut().zip(vv) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

fn residual_norm<T: Scalar>(x: &[T], a: &[T], gamma: &[T], beta: &[T]) -> Vec<T> {
    let r: Vec<T> = x.iter().zip(a).map(|(&x, &a)| x + a).collect();
    let mut out = vec![T::zero(); r.len()];
    layernorm_rows(&r, gamma, beta, &mut out, None);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> Model<f64> {
        let mut m = Model::init(ModelConfig::test_config(11, 3, 12), seed).unwrap();
        // Give condition rows 1.. distinct values.
        let n = m.condition_row0_len();
        for (i, x) in m.params[COND].data_mut()[n..].iter_mut().enumerate() {
            *x = ((i as f64) * 0.37).sin() * 0.5;
        }
        m
    }

    #[test]
    fn single_key_attention_matches_duplicated_key() {
        let (b, lq, d) = (2, 3, 4);
        let mut r = rng::seeded(3);
        let mut g = Graph::<f64>::new();
        let q = g.param(rng::normal_tensor(&mut r, &[b, lq, d], 1.0));
        let kv: Tensor<f64> = rng::normal_tensor(&mut r, &[b, 1, d], 1.0);
        let doubled = Tensor::from_fn(&[b, 2, d], |i| kv.data()[(i / (2 * d)) * d + i % d]);
        let w = [0, 1, 2, 3].map(|_| g.param(rng::normal_tensor(&mut r, &[d, d], 0.5)));
        let one = g.param(kv);
        let two = g.param(doubled);
        let a = multi_head_attention(&mut g, q, one, w, 2, None).unwrap();
        let c = multi_head_attention(&mut g, q, two, w, 2, None).unwrap();
        for (x, y) in g.value(a).data().iter().zip(g.value(c).data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn logits_shape() {
        let cfg = ModelConfig { vocab_size: 40, ..ModelConfig::test_config(40, 1, 16) };
        let m: Model<f32> = Model::init(cfg, 1).unwrap();
        let out = m.logits(&[0; 10], 2, 5, &[0, 0]).unwrap();
        assert_eq!(out.shape(), &[2, 5, 40]);
    }

    #[test]
    fn input_errors() {
        let m = tiny(1);
        assert!(matches!(m.logits(&[0; 13], 1, 13, &[0]), Err(Error::LengthOverflow { len: 13, max: 12 })));
        assert!(matches!(m.logits(&[0; 2], 1, 2, &[3]), Err(Error::UnknownCondition { id: 3, count: 3 })));
        assert!(matches!(m.logits(&[0, 11], 1, 2, &[0]), Err(Error::UnknownId(11))));
    }

    #[test]
    fn count_params_by_hand() {
        let cfg = ModelConfig {
            n_layers: 0,
            ..ModelConfig::test_config(5, 2, 8)
        };
        let d = 16;
        assert_eq!(count_params(&cfg), 5 * d + 8 * d + 2 * d + (d * 5 + 5));
        // Test config: per layer 8 d^2 attention weights, 2 d d_ffn + d_ffn + d
        // in the FFN, 3 layernorms of 2 d.
        let cfg = ModelConfig::test_config(20, 2, 12);
        let per_layer = 8 * 256 + 2 * 16 * 64 + 64 + 16 + 3 * 32;
        assert_eq!(per_layer, 4272);
        let embed = 20 * 16 + 12 * 16 + 2 * 16 + 16 * 20 + 20;
        assert_eq!(count_params(&cfg), embed + 2 * per_layer);
        let one = ModelConfig { n_layers: 1, ..cfg.clone() };
        let four = ModelConfig { n_layers: 4, ..cfg };
        assert_eq!(count_params(&four) - count_params(&one), 3 * per_layer);
    }

    #[test]
    fn init_respects_conventions() {
        let m: Model<f64> = Model::init(ModelConfig::test_config(9, 3, 8), 5).unwrap();
        let names = m.names();
        for (name, p) in names.iter().zip(m.params()) {
            if name.ends_with("gamma") {
                assert!(p.data().iter().all(|&x| x == 1.0), "{name}");
            } else if name.ends_with("beta") || name.ends_with(".b1") || name.ends_with(".b2") || name == "head.b" {
                assert!(p.data().iter().all(|&x| x == 0.0), "{name}");
            } else if name != "cond_emb" {
                assert!(p.data().iter().any(|&x| x != 0.0), "{name}");
            }
        }
        let cond = m.params()[COND].data();
        assert!(cond[..16].iter().all(|&x| x == 0.0));
        assert!(cond[16..].iter().any(|&x| x != 0.0));
        assert_eq!(Model::init(ModelConfig::test_config(9, 3, 8), 5).unwrap(), m);
    }

    #[test]
    fn causal_perturbation_leaves_prefix_bit_identical() {
        let m = tiny(2);
        let a = [0, 4, 5, 6, 7, 8, 9, 10];
        let mut b = a;
        b[5] = 1;
        let la = m.logits(&a, 1, 8, &[1]).unwrap();
        let lb = m.logits(&b, 1, 8, &[1]).unwrap();
        assert_eq!(la.data()[..5 * 11], lb.data()[..5 * 11]);
        assert_ne!(la.data()[5 * 11..], lb.data()[5 * 11..]);
    }

    #[test]
    fn causal_gradient_is_zero_for_later_tokens() {
        let m = tiny(3);
        // Tokens at positions 3.. are ids used nowhere earlier.
        let tokens = [4, 5, 6, 7, 8, 9];
        let mut g = Graph::new();
        let p = m.bind(&mut g, |i| i == TOK);
        let logits = m.forward_graph(&mut g, &p, &tokens, 1, 6, &[2], CrossMode::Attend).unwrap();
        let flat = g.reshape(logits, &[6, 11]).unwrap();
        let w = g.constant(Tensor::from_fn(&[6, 11], |k| if k / 11 <= 2 { (k as f64).cos() } else { 0.0 }));
        let y = g.mul(flat, w).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let gt = grads.tensor(p[TOK]);
        for id in 7..=9 {
            assert!(gt.data()[id * 16..(id + 1) * 16].iter().all(|&x| x == 0.0));
        }
        assert!(gt.data()[4 * 16..5 * 16].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn zero_condition_matches_layernorm_only_variant() {
        let m = tiny(4);
        let tokens = [0, 5, 9, 3, 0, 7, 7, 2];
        let a = m.logits_with(&tokens, 2, 4, &[0, 0], CrossMode::Attend).unwrap();
        let b = m.logits_with(&tokens, 2, 4, &[0, 0], CrossMode::LayerNormOnly).unwrap();
        assert_eq!(a.data(), b.data());
        let c = m.logits_with(&tokens, 2, 4, &[1, 1], CrossMode::Attend).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let m = tiny(5);
        let rows = [[0, 4, 5, 6], [0, 9, 9, 1], [0, 7, 4, 2]];
        let conds = [0, 2, 1];
        let flat: Vec<usize> = rows.concat();
        let out = m.logits(&flat, 3, 4, &conds).unwrap();
        let order = [2, 0, 1];
        let pflat: Vec<usize> = order.iter().flat_map(|&i| rows[i]).collect();
        let pconds: Vec<usize> = order.iter().map(|&i| conds[i]).collect();
        let pout = m.logits(&pflat, 3, 4, &pconds).unwrap();
        let w = 4 * 11;
        for (k, &i) in order.iter().enumerate() {
            assert_eq!(pout.data()[k * w..(k + 1) * w], out.data()[i * w..(i + 1) * w]);
        }
    }

    #[test]
    fn single_head_identity_output_is_scaled_dot_product_attention() {
        let d = 4;
        let q_in = Tensor::from_fn(&[1, 3, d], |i| (i as f64 * 0.3).sin());
        let kv_in = Tensor::from_fn(&[1, 2, d], |i| (i as f64 * 0.7).cos());
        let wq = Tensor::from_fn(&[d, d], |i| ((i * 7 % 5) as f64 - 2.0) * 0.1);
        let wk = Tensor::from_fn(&[d, d], |i| ((i * 3 % 7) as f64 - 3.0) * 0.1);
        let wv = Tensor::from_fn(&[d, d], |i| ((i * 5 % 3) as f64 - 1.0) * 0.2);
        let eye = Tensor::from_fn(&[d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
        let mut g = Graph::new();
        let vars = [&q_in, &kv_in, &wq, &wk, &wv, &eye].map(|t| g.constant(t.clone()));
        let out = multi_head_attention(&mut g, vars[0], vars[1], [vars[2], vars[3], vars[4], vars[5]], 1, None).unwrap();
        let mm = |a: &[f64], b: &[f64], n: usize, k: usize, m: usize| -> Vec<f64> {
            (0..n * m).map(|ij| (0..k).map(|p| a[ij / m * k + p] * b[p * m + ij % m]).sum()).collect()
        };
        let q = mm(q_in.data(), wq.data(), 3, d, d);
        let k = mm(kv_in.data(), wk.data(), 2, d, d);
        let v = mm(kv_in.data(), wv.data(), 2, d, d);
        for i in 0..3 {
            let s: Vec<f64> = (0..2)
                .map(|j| (0..d).map(|p| q[i * d + p] * k[j * d + p]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            for c in 0..d {
                let want: f64 = (0..2).map(|j| s[j].exp() / z * v[j * d + c]).sum();
                assert!((g.value(out).data()[i * d + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn incremental_decoder_matches_full_forward() {
        let m: Model<f32> = tiny(6).cast();
        let tokens = [[0usize, 4, 6, 8, 10, 5, 5], [0, 9, 9, 4, 7, 6, 1]];
        let conds = [1, 0];
        let flat: Vec<usize> = tokens.concat();
        let full = m.logits(&flat, 2, 7, &conds).unwrap();
        let mut dec = m.incremental(&conds).unwrap();
        for t in 0..7 {
            let step = dec.step(&[tokens[0][t], tokens[1][t]]).unwrap();
            for b in 0..2 {
                for v in 0..11 {
                    let want = full.data()[(b * 7 + t) * 11 + v];
                    assert!((step[b * 11 + v] - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_over_visible_keys() {
        let mut g = Graph::<f64>::new();
        let s = g.constant(Tensor::from_fn(&[2, 4, 4], |i| (i as f64).sin()));
        let s = g.masked_fill(s, causal_mask(4)).unwrap();
        let p = g.softmax_last_axis(s);
        for (r, row) in g.value(p).data().chunks(4).enumerate() {
            let i = r % 4;
            assert!((row[..=i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[i + 1..].iter().all(|&x| x == 0.0));
        }
    }
}
