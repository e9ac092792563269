//! Autoregressive generation and sequence scoring.
//!
//! Sample `i` draws its randomness from `rng::stream(seed, i)` and samples
//! are decoded in fixed chunks of [`CHUNK`], so the output does not depend on
//! how chunks are spread over threads.

use molforge_tensor::kernels::log_prob;
use molforge_tensor::{rng, Scalar};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Precision};
use crate::store::Checkpoint;
use crate::tokenizer::{decode, encode_strict, tokenize, Vocab, BOS, EOS, PAD, UNK};

/// Samples decoded in lockstep per batch.
pub const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// 0 selects the most likely token at every step.
    pub temperature: f64,
    pub top_k: Option<usize>,
    /// Longest sequence counting BOS and EOS; capped by the model.
    pub max_len: Option<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: 1.0,
            top_k: None,
            max_len: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub smiles: String,
    pub condition: usize,
    /// Sum of `-ln P(token | prefix, condition)` over the generated tokens,
    /// EOS included when present.
    pub nll: f64,
    /// No EOS before the length limit.
    pub truncated: bool,
    #[serde(skip)]
    pub ids: Vec<usize>,
}

/// A read-only model plus its vocabulary.
pub struct Generator<T> {
    model: Model<T>,
    vocab: Vocab,
}

impl Generator<f32> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Generator::new(ckpt.model()?, ckpt.vocab.clone())
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(model: Model<T>, vocab: Vocab) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(Error::ConfigMismatch(format!(
                "vocabulary of {} tokens for a model of {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        Ok(Generator { model, vocab })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn check(&self, cond: usize, cfg: &SampleConfig) -> Result<usize> {
        let c = self.model.config();
        if cond >= c.n_conditions {
            return Err(Error::UnknownCondition {
                id: cond,
                count: c.n_conditions,
            });
        }
        if !(cfg.temperature >= 0.0) || cfg.temperature.is_infinite() {
            return Err(Error::InvalidConfig("temperature must be finite and >= 0".into()));
        }
        if cfg.top_k == Some(0) {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        let max_len = cfg.max_len.unwrap_or(c.max_len).min(c.max_len);
        if max_len < 2 {
            return Err(Error::InvalidConfig("max_len must be at least 2".into()));
        }
        Ok(max_len)
    }

    /// `n` samples under condition `cond`.
    pub fn generate(&self, cond: usize, n: usize, cfg: &SampleConfig) -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(n);
        self.generate_each(cond, n, cfg, |s| {
            out.push(s);
            Ok(())
        })?;
        Ok(out)
    }

    /// Streams `n` samples to `emit` in index order. Memory stays bounded
    /// by one round of chunks per thread.
    pub fn generate_each(
        &self,
        cond: usize,
        n: usize,
        cfg: &SampleConfig,
        mut emit: impl FnMut(Sample) -> Result<()>,
    ) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        let max_len = self.check(cond, cfg)?;
        let round = CHUNK * rayon::current_num_threads();
        for start in (0..n).step_by(round) {
            let end = (start + round).min(n);
            let starts: Vec<usize> = (start..end).step_by(CHUNK).collect();
            let chunks: Vec<Result<Vec<Sample>>> = starts
                .par_iter()
                .map(|&s| {
                    let idx: Vec<usize> = (s..(s + CHUNK).min(end)).collect();
                    let prefixes = vec![Vec::new(); idx.len()];
                    self.rollout(cond, &idx, &prefixes, cfg, max_len)
                })
                .collect();
            for chunk in chunks {
                for s in chunk? {
                    emit(s)?;
                }
            }
        }
        Ok(())
    }

    /// Continues each prefix; sample `i` uses stream `i`. The returned text
    /// includes the prefix.
    pub fn complete(&self, cond: usize, prefixes: &[&str], cfg: &SampleConfig) -> Result<Vec<Sample>> {
        let max_len = self.check(cond, cfg)?;
        let mut ids = Vec::with_capacity(prefixes.len());
        for p in prefixes {
            let mut seq = Vec::new();
            for t in tokenize(p)? {
                seq.push(self.vocab.id(t).ok_or_else(|| Error::UnknownToken(t.to_string()))?);
            }
            if seq.len() + 1 >= max_len {
                return Err(Error::LengthOverflow {
                    len: seq.len() + 2,
                    max: max_len,
                });
            }
            ids.push(seq);
        }
        let idx: Vec<usize> = (0..prefixes.len()).collect();
        let parts: Vec<Result<Vec<Sample>>> = idx
            .par_chunks(CHUNK)
            .map(|c| self.rollout(cond, c, &ids[c[0]..c[0] + c.len()], cfg, max_len))
            .collect();
        let mut out = Vec::with_capacity(prefixes.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    fn rollout(
        &self,
        cond: usize,
        indices: &[usize],
        prefixes: &[Vec<usize>],
        cfg: &SampleConfig,
        max_len: usize,
    ) -> Result<Vec<Sample>> {
        let b = indices.len();
        let v = self.model.config().vocab_size;
        let mut rngs: Vec<_> = indices.iter().map(|&i| rng::stream(cfg.seed, i as u64)).collect();
        let mut seqs: Vec<Vec<usize>> = vec![vec![BOS]; b];
        let mut done = vec![false; b];
        let mut dec = self.model.incremental(&vec![cond; b])?;
        let mut feed = vec![BOS; b];
        let mut scratch = vec![0f64; v];
        // Predictions at positions 0..max_len-1 cover at most max_len-2
        // tokens followed by EOS.
        for pos in 0..max_len - 1 {
            let logits = dec.step(&feed)?;
            for r in 0..b {
                if done[r] {
                    feed[r] = PAD;
                    continue;
                }
                let next = match prefixes[r].get(pos) {
                    Some(&t) => t,
                    None => {
                        let row = &logits[r * v..(r + 1) * v];
                        scratch.iter_mut().zip(row).for_each(|(s, &x)| *s = x.to_f64().unwrap());
                        choose(&mut scratch, cfg, &mut rngs[r])
                    }
                };
                seqs[r].push(next);
                if next == EOS {
                    done[r] = true;
                }
                feed[r] = if done[r] { PAD } else { next };
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        let conds = vec![cond; b];
        let nll = score_ids(&self.model, &conds, &seqs)?;
        seqs.into_iter()
            .zip(nll)
            .map(|(ids, nll)| {
                let truncated = ids.last() != Some(&EOS);
                let smiles = decode(&ids, &self.vocab)?;
                Ok(Sample {
                    smiles,
                    condition: cond,
                    nll,
                    truncated,
                    ids,
                })
            })
            .collect()
    }

    /// Exact `NLL(S | c)`: the generated tokens and EOS, given BOS.
    pub fn score(&self, cond: usize, smiles: &str) -> Result<f64> {
        Ok(self.score_many(&[(cond, smiles)])?[0])
    }

    /// Scores several strings in one padded batch.
    pub fn score_many(&self, items: &[(usize, &str)]) -> Result<Vec<f64>> {
        let mut conds = Vec::with_capacity(items.len());
        let mut seqs = Vec::with_capacity(items.len());
        for &(c, s) in items {
            conds.push(c);
            seqs.push(encode_strict(s, &self.vocab)?.ids);
        }
        score_ids(&self.model, &conds, &seqs)
    }
}

/// Picks the next token from one row of logits, which is overwritten.
/// BOS, PAD and UNK are never chosen.
fn choose(logits: &mut [f64], cfg: &SampleConfig, rng: &mut rng::SplitMix64) -> usize {
    for banned in [BOS, PAD, UNK] {
        logits[banned] = f64::NEG_INFINITY;
    }
    if let Some(k) = cfg.top_k.filter(|&k| k < logits.len()) {
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        for &i in &order[k..] {
            logits[i] = f64::NEG_INFINITY;
        }
    }
    let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    if cfg.temperature == 0.0 {
        return best;
    }
    let max = logits[best];
    let mut total = 0.0;
    for x in logits.iter_mut() {
        *x = ((*x - max) / cfg.temperature).exp();
        total += *x;
    }
    let u = rng::uniform(rng) * total;
    let mut acc = 0.0;
    for (i, &p) in logits.iter().enumerate() {
        acc += p;
        if p > 0.0 && u < acc {
            return i;
        }
    }
    best
}

/// NLL of each id sequence (starting with BOS) under its condition, summed
/// over every position after BOS.
pub fn score_ids<T: Scalar>(model: &Model<T>, conds: &[usize], seqs: &[Vec<usize>]) -> Result<Vec<f64>> {
    if seqs.is_empty() {
        return Ok(Vec::new());
    }
    let v = model.config().vocab_size;
    let len = seqs.iter().map(|s| s.len().saturating_sub(1)).max().unwrap_or(0).max(1);
    let b = seqs.len();
    let mut tokens = vec![PAD; b * len];
    for (r, s) in seqs.iter().enumerate() {
        if s.first() != Some(&BOS) {
            return Err(Error::InvalidConfig("scored sequences must start with BOS".into()));
        }
        for (t, &id) in s[..s.len() - 1].iter().enumerate() {
            tokens[r * len + t] = id;
        }
    }
    let logits = model.logits(&tokens, b, len, conds)?;
    seqs.iter()
        .enumerate()
        .map(|(r, s)| {
            let mut nll = 0.0;
            for (t, &target) in s[1..].iter().enumerate() {
                if target >= v {
                    return Err(Error::UnknownId(target));
                }
                let at = (r * len + t) * v;
                nll -= log_prob(&logits.data()[at..at + v], target).to_f64().unwrap();
            }
            Ok(nll)
        })
        .collect()
}

/// `n` samples from a checkpoint, in its stored precision.
pub fn generate(ckpt: &Checkpoint, cond: usize, n: usize, cfg: &SampleConfig) -> Result<Vec<Sample>> {
    match ckpt.model_config.precision {
        Precision::F32 => Generator::new(ckpt.model::<f32>()?, ckpt.vocab.clone())?.generate(cond, n, cfg),
        Precision::F64 => Generator::new(ckpt.model::<f64>()?, ckpt.vocab.clone())?.generate(cond, n, cfg),
    }
}

pub fn score(ckpt: &Checkpoint, cond: usize, smiles: &str) -> Result<f64> {
    match ckpt.model_config.precision {
        Precision::F32 => Generator::new(ckpt.model::<f32>()?, ckpt.vocab.clone())?.score(cond, smiles),
        Precision::F64 => Generator::new(ckpt.model::<f64>()?, ckpt.vocab.clone())?.score(cond, smiles),
    }
}
