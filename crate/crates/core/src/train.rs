//! Pre-training and fine-tuning loops.
//!
//! Both phases minimize the per-token negative log-likelihood under teacher
//! forcing with Adam and global gradient clipping. Condition row 0 never
//! receives an update and is re-zeroed after every step.

use std::io::Write;
use std::time::Instant;

use molforge_tensor::kernels::log_prob;
use molforge_tensor::{clip_grad_norm, rng, Adam, Graph, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CrossMode, Model, ModelConfig, Precision, COND};
use crate::store::{Batch, Checkpoint, Corpus, EncodedCorpus};
use crate::tokenizer::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup over `warmup_steps`, then linear decay to zero at the
    /// last planned step.
    #[default]
    WarmupLinearDecay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneScope {
    #[default]
    AllWeights,
    ConditionEmbeddingsOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    /// Stop once this much wall time has passed.
    pub time_limit_secs: Option<f64>,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: u64,
    pub seed: u64,
    pub grad_clip_norm: f64,
    /// Steps between metric records; 0 logs once per epoch.
    pub eval_every: u64,
    pub precision: Precision,
    pub finetune_scope: FinetuneScope,
    /// Fine-tune one target at a time instead of mixed batches.
    pub sequential_targets: bool,
    /// Group sequences of similar length into batches to cut padding.
    pub bucket_by_length: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            max_steps: None,
            time_limit_secs: None,
            batch_size: 64,
            lr: 3e-4,
            lr_schedule: LrSchedule::WarmupLinearDecay,
            warmup_steps: 1000,
            seed: 0,
            grad_clip_norm: 1.0,
            eval_every: 0,
            precision: Precision::F32,
            finetune_scope: FinetuneScope::AllWeights,
            sequential_targets: false,
            bucket_by_length: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::InvalidConfig("grad_clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based `step` out of `total` planned steps.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::WarmupLinearDecay => {
                let warm = self.warmup_steps.min(total);
                if step < warm {
                    self.lr * (step + 1) as f64 / warm as f64
                } else {
                    let rest = (total - warm).max(1) as f64;
                    self.lr * (1.0 - (step - warm) as f64 / rest).max(0.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub nll_per_token: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<MetricRecord>,
    /// Batch loss of every optimizer step.
    pub losses: Vec<f64>,
    pub steps: u64,
    /// Sequences left out for exceeding `max_len`.
    pub dropped: usize,
}

/// Where metric records go besides the returned log.
pub type MetricSink<'a> = Option<&'a mut dyn Write>;

/// Total NLL and token count of a corpus under `model`, in corpus order.
pub fn corpus_nll<T: Scalar>(model: &Model<T>, data: &EncodedCorpus, batch_size: usize) -> Result<(f64, usize)> {
    let v = model.config().vocab_size;
    let (mut total, mut count) = (0.0, 0);
    for b in data.in_order(batch_size) {
        let logits = model.logits(&b.inputs, b.batch, b.len, &b.conds)?;
        for r in (0..b.batch * b.len).filter(|&r| b.mask[r]) {
            total -= log_prob(&logits.data()[r * v..(r + 1) * v], b.targets[r]).to_f64().unwrap();
            count += 1;
        }
    }
    Ok((total, count))
}

struct Loop<'a, 'w, T> {
    model: Model<T>,
    adam: Adam<T>,
    cfg: &'a TrainConfig,
    heldout: Option<&'a EncodedCorpus>,
    trainable: Box<dyn Fn(usize) -> bool + 'a>,
    start: Instant,
    step: u64,
    log: Vec<MetricRecord>,
    losses: Vec<f64>,
    sink: MetricSink<'w>,
}

impl<T: Scalar> Loop<'_, '_, T> {
    fn planned_steps(&self, data: &EncodedCorpus) -> u64 {
        let per_epoch = data.batches_per_epoch(self.cfg.batch_size) as u64;
        let all = per_epoch * self.cfg.epochs as u64;
        self.cfg.max_steps.map_or(all, |m| m.min(all))
    }

    fn out_of_budget(&self, total: u64) -> bool {
        self.step >= total
            || self
                .cfg
                .time_limit_secs
                .is_some_and(|t| self.start.elapsed().as_secs_f64() >= t)
    }

    fn record(&mut self, split: &str, nll: f64, lr: f64) -> Result<()> {
        let rec = MetricRecord {
            step: self.step,
            split: split.to_string(),
            nll_per_token: nll,
            lr,
            wall_ms: self.start.elapsed().as_millis() as u64,
        };
        if let Some(w) = self.sink.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            writeln!(w)?;
        }
        self.log.push(rec);
        Ok(())
    }

    fn evaluate(&mut self, window: &mut (f64, usize), lr: f64) -> Result<()> {
        if window.1 > 0 {
            self.record("train", window.0 / window.1 as f64, lr)?;
            *window = (0.0, 0);
        }
        if let Some(h) = self.heldout.filter(|h| !h.is_empty()) {
            let (nll, n) = corpus_nll(&self.model, h, self.cfg.batch_size)?;
            self.record("heldout", nll / n as f64, lr)?;
        }
        Ok(())
    }

    fn run(&mut self, data: &EncodedCorpus) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let total = self.step + self.planned_steps(data);
        let first = self.step;
        let mut window = (0.0, 0usize);
        let mut lr = self.cfg.lr_at(0, total - first);
        'epochs: for epoch in 0..self.cfg.epochs as u64 {
            let batches: Box<dyn Iterator<Item = Batch>> = if self.cfg.bucket_by_length {
                Box::new(data.epoch_bucketed(self.cfg.batch_size, self.cfg.seed, epoch))
            } else {
                Box::new(data.epoch(self.cfg.batch_size, self.cfg.seed, epoch))
            };
            for b in batches {
                if self.out_of_budget(total) {
                    break 'epochs;
                }
                lr = self.cfg.lr_at(self.step - first, total - first);
                let loss = self.train_step(&b.inputs, &b.targets, &b.mask, &b.conds, b.batch, b.len, lr)?;
                let tokens = b.mask.iter().filter(|&&m| m).count();
                window.0 += loss * tokens as f64;
                window.1 += tokens;
                self.losses.push(loss);
                self.step += 1;
                if self.cfg.eval_every > 0 && self.step % self.cfg.eval_every == 0 {
                    self.evaluate(&mut window, lr)?;
                }
            }
            if self.cfg.eval_every == 0 {
                self.evaluate(&mut window, lr)?;
            }
        }
        self.evaluate(&mut window, lr)
    }

    #[allow(clippy::too_many_arguments)]
    fn train_step(
        &mut self,
        inputs: &[usize],
        targets: &[usize],
        mask: &[bool],
        conds: &[usize],
        batch: usize,
        len: usize,
        lr: f64,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.model.bind(&mut g, &self.trainable);
        let logits = self
            .model
            .forward_graph(&mut g, &p, inputs, batch, len, conds, CrossMode::Attend)?;
        let loss = g.cross_entropy_logits(logits, targets, mask)?;
        let value = g.value(loss).data()[0].to_f64().unwrap();
        let mut grads = g.backward(loss)?;
        let mut gs: Vec<Option<Tensor<T>>> = p
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.trainable)(i).then(|| grads.take(v)))
            .collect();
        if let Some(gc) = gs[COND].as_mut() {
            let n = self.model.condition_row0_len();
            gc.data_mut()[..n].iter_mut().for_each(|x| *x = T::zero());
        }
        clip_grad_norm(&mut gs, self.cfg.grad_clip_norm);
        self.adam.step(self.model.params_mut(), &gs, lr)?;
        self.model.zero_condition_row();
        Ok(value)
    }
}

fn provenance(phase: &str, cfg: &TrainConfig, steps: u64, sequences: usize) -> serde_json::Value {
    serde_json::json!({
        "phase": phase,
        "train_config": cfg,
        "steps": steps,
        "sequences": sequences,
    })
}

/// Unconditional pre-training. Every corpus entry must carry condition 0.
/// `heldout`, when given, is scored at each metric interval.
pub fn pretrain(
    corpus: &Corpus,
    heldout: Option<&Corpus>,
    vocab: &Vocab,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    sink: MetricSink<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.entries.iter().any(|e| e.condition != 0) {
        return Err(Error::InvalidConfig("pre-training corpus must be unconditional".into()));
    }
    let mut mc = model_config.clone();
    mc.precision = cfg.precision;
    if mc.vocab_size != vocab.len() {
        return Err(Error::ConfigMismatch(format!(
            "model vocab_size {} but vocabulary has {} tokens",
            mc.vocab_size,
            vocab.len()
        )));
    }
    match cfg.precision {
        Precision::F32 => pretrain_as::<f32>(corpus, heldout, vocab, mc, cfg, sink),
        Precision::F64 => pretrain_as::<f64>(corpus, heldout, vocab, mc, cfg, sink),
    }
}

fn pretrain_as<T: Scalar>(
    corpus: &Corpus,
    heldout: Option<&Corpus>,
    vocab: &Vocab,
    mc: ModelConfig,
    cfg: &TrainConfig,
    sink: MetricSink<'_>,
) -> Result<TrainOutcome> {
    let data = EncodedCorpus::new(corpus, vocab, mc.max_len)?;
    let held = heldout.map(|h| EncodedCorpus::new(h, vocab, mc.max_len)).transpose()?;
    let model = Model::<T>::init(mc, cfg.seed)?;
    let sizes: Vec<usize> = model.params().iter().map(Tensor::len).collect();
    let mut run = Loop {
        adam: Adam::new(&sizes),
        model,
        cfg,
        heldout: held.as_ref(),
        trainable: Box::new(|_| true),
        start: Instant::now(),
        step: 0,
        log: Vec::new(),
        losses: Vec::new(),
        sink,
    };
    run.run(&data)?;
    let checkpoint = Checkpoint::from_model(
        &run.model,
        vocab,
        &[],
        Some(&run.adam),
        cfg.seed,
        provenance("pretrain", cfg, run.step, data.len()),
    );
    Ok(TrainOutcome {
        checkpoint,
        log: run.log,
        losses: run.losses,
        steps: run.step,
        dropped: data.dropped(),
    })
}

/// Conditional fine-tuning from a pre-trained checkpoint. The condition
/// table is rebuilt with one row per target (ids 1..=n, Normal(0, 0.02))
/// plus the zero row 0.
pub fn finetune(
    base: &Checkpoint,
    corpus: &Corpus,
    targets: &[String],
    heldout: Option<&Corpus>,
    cfg: &TrainConfig,
    sink: MetricSink<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::ConfigMismatch("no fine-tuning targets".into()));
    }
    let n = targets.len();
    for (i, e) in corpus.entries.iter().enumerate() {
        if e.condition == 0 || e.condition > n {
            return Err(Error::ConfigMismatch(format!(
                "entry {} has condition {} but targets are 1..={n}",
                i + 1,
                e.condition
            )));
        }
    }
    if base.vocab.len() != base.model_config.vocab_size {
        return Err(Error::ConfigMismatch("checkpoint vocabulary does not match its model".into()));
    }
    match cfg.precision {
        Precision::F32 => finetune_as::<f32>(base, corpus, targets, heldout, cfg, sink),
        Precision::F64 => finetune_as::<f64>(base, corpus, targets, heldout, cfg, sink),
    }
}

fn finetune_as<T: Scalar>(
    base: &Checkpoint,
    corpus: &Corpus,
    targets: &[String],
    heldout: Option<&Corpus>,
    cfg: &TrainConfig,
    sink: MetricSink<'_>,
) -> Result<TrainOutcome> {
    let base_model = base.model::<T>()?;
    let mut mc = base.model_config.clone();
    mc.n_conditions = targets.len() + 1;
    mc.precision = cfg.precision;
    let mut params = base_model.into_params();
    let (m, d) = (mc.n_condition_slots, mc.d_model);
    let mut table = rng::normal_tensor::<T>(&mut rng::stream(cfg.seed, u64::MAX), &[mc.n_conditions, m, d], 0.02);
    table.data_mut()[..m * d].iter_mut().for_each(|x| *x = T::zero());
    params[COND] = table;
    let model = Model::from_parts(mc, params)?;

    let data = EncodedCorpus::new(corpus, &base.vocab, model.config().max_len)?;
    let held = heldout
        .map(|h| EncodedCorpus::new(h, &base.vocab, model.config().max_len))
        .transpose()?;
    let sizes: Vec<usize> = model.params().iter().map(Tensor::len).collect();
    let scope = cfg.finetune_scope;
    let mut run = Loop {
        adam: Adam::new(&sizes),
        model,
        cfg,
        heldout: held.as_ref(),
        trainable: Box::new(move |i| scope == FinetuneScope::AllWeights || i == COND),
        start: Instant::now(),
        step: 0,
        log: Vec::new(),
        losses: Vec::new(),
        sink,
    };
    if cfg.sequential_targets {
        for t in 1..=targets.len() {
            let part = data.filter_condition(t);
            if !part.is_empty() {
                run.run(&part)?;
            }
        }
    } else {
        run.run(&data)?;
    }
    let checkpoint = Checkpoint::from_model(
        &run.model,
        &base.vocab,
        targets,
        Some(&run.adam),
        cfg.seed,
        provenance("finetune", cfg, run.step, data.len()),
    );
    Ok(TrainOutcome {
        checkpoint,
        log: run.log,
        losses: run.losses,
        steps: run.step,
        dropped: data.dropped(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Entry, Split};
    use crate::tokenizer::build_vocab;

    fn corpus(items: &[(&str, usize)]) -> Corpus {
        Corpus {
            entries: items
                .iter()
                .map(|&(s, c)| Entry {
                    smiles: s.to_string(),
                    condition: c,
                })
                .collect(),
            split: Split::Train,
            skipped: vec![],
        }
    }

    fn small() -> (Corpus, Vocab, ModelConfig) {
        let c = corpus(&[("CCO", 0), ("c1ccccc1", 0), ("CC(=O)N", 0), ("OCCN", 0), ("CCCl", 0), ("FC(F)F", 0)]);
        let v = build_vocab(c.smiles()).unwrap();
        let mc = ModelConfig::test_config(v.len(), 1, 16);
        (c, v, mc)
    }

    fn quick(steps: u64) -> TrainConfig {
        TrainConfig {
            epochs: 1000,
            max_steps: Some(steps),
            batch_size: 4,
            lr: 1e-2,
            lr_schedule: LrSchedule::Constant,
            eval_every: 5,
            precision: Precision::F64,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig {
            lr: 1.0,
            warmup_steps: 4,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..8).map(|s| cfg.lr_at(s, 8)).collect();
        assert_eq!(lrs, [0.25, 0.5, 0.75, 1.0, 1.0, 0.75, 0.5, 0.25]);
        let c = TrainConfig {
            lr_schedule: LrSchedule::Constant,
            ..cfg
        };
        assert_eq!(c.lr_at(0, 8), 1.0);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"epochs": 2, "lr": 0.001, "lr_schedule": "constant", "precision": "f64"}"#;
        let cfg: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.precision), (2, 64, Precision::F64));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 2}"#).is_err());
    }

    #[test]
    fn first_loss_is_near_uniform_and_loss_falls() {
        let (c, v, mc) = small();
        let out = pretrain(&c, None, &v, &mc, &quick(60), None).unwrap();
        let uniform = (v.len() as f64).ln();
        assert!((out.losses[0] - uniform).abs() < 0.1 * uniform, "{} vs {uniform}", out.losses[0]);
        assert!(out.losses.last().unwrap() < &(0.6 * uniform));
        assert_eq!(out.steps, 60);
        assert!(out.log.iter().all(|r| r.split == "train"));
        assert_eq!(out.log.len(), 12);
    }

    #[test]
    fn runs_are_deterministic() {
        let (c, v, mc) = small();
        let a = pretrain(&c, None, &v, &mc, &quick(20), None).unwrap();
        let b = pretrain(&c, None, &v, &mc, &quick(20), None).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn metrics_are_written_as_json_lines() {
        let (c, v, mc) = small();
        let mut sink = Vec::new();
        let out = pretrain(&c, Some(&c), &v, &mc, &quick(10), Some(&mut sink)).unwrap();
        let text = String::from_utf8(sink).unwrap();
        let parsed: Vec<MetricRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, out.log);
        assert!(parsed.iter().any(|r| r.split == "heldout"));
        for key in ["step", "split", "nll_per_token", "lr", "wall_ms"] {
            assert!(text.lines().next().unwrap().contains(&format!("\"{key}\"")));
        }
    }

    #[test]
    fn condition_row_zero_stays_zero() {
        let (c, v, mc) = small();
        let base = pretrain(&c, None, &v, &mc, &quick(10), None).unwrap().checkpoint;
        let row = |ck: &Checkpoint| {
            let n = ck.model_config.n_condition_slots * ck.model_config.d_model;
            ck.params[COND].data()[..n].to_vec()
        };
        assert!(row(&base).iter().all(|&x| x == 0.0));
        let ft = corpus(&[("CCCl", 1), ("FC(F)F", 2), ("CCO", 1)]);
        let names = vec!["A".to_string(), "B".to_string()];
        let out = finetune(&base, &ft, &names, None, &quick(10), None).unwrap();
        assert!(row(&out.checkpoint).iter().all(|&x| x == 0.0));
        assert_eq!(out.checkpoint.model_config.n_conditions, 3);
        assert_eq!(out.checkpoint.conditions, names);
    }

    #[test]
    fn condition_only_scope_freezes_everything_else() {
        let (c, v, mc) = small();
        let base = pretrain(&c, None, &v, &mc, &quick(5), None).unwrap().checkpoint;
        let ft = corpus(&[("CCCl", 1), ("FC(F)F", 2)]);
        let cfg = TrainConfig {
            finetune_scope: FinetuneScope::ConditionEmbeddingsOnly,
            ..quick(10)
        };
        let out = finetune(&base, &ft, &["A".into(), "B".into()], None, &cfg, None).unwrap();
        for (i, (a, b)) in out.checkpoint.params.iter().zip(&base.params).enumerate() {
            if i != COND {
                let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b), "tensor {i}");
            }
        }
    }

    #[test]
    fn finetune_rejects_bad_conditions() {
        let (c, v, mc) = small();
        let base = pretrain(&c, None, &v, &mc, &quick(2), None).unwrap().checkpoint;
        let names = vec!["A".to_string()];
        let zero = corpus(&[("CCO", 0)]);
        assert!(matches!(finetune(&base, &zero, &names, None, &quick(2), None), Err(Error::ConfigMismatch(_))));
        let high = corpus(&[("CCO", 2)]);
        assert!(matches!(finetune(&base, &high, &names, None, &quick(2), None), Err(Error::ConfigMismatch(_))));
        let unknown = corpus(&[("CCBr", 1)]);
        assert!(matches!(finetune(&base, &unknown, &names, None, &quick(2), None), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn sequential_targets_run_both_parts() {
        let (c, v, mc) = small();
        let base = pretrain(&c, None, &v, &mc, &quick(2), None).unwrap().checkpoint;
        let ft = corpus(&[("CCCl", 1), ("FC(F)F", 2)]);
        let cfg = TrainConfig {
            sequential_targets: true,
            epochs: 3,
            max_steps: None,
            ..quick(0)
        };
        let out = finetune(&base, &ft, &["A".into(), "B".into()], None, &cfg, None).unwrap();
        assert_eq!(out.steps, 6);
    }

    #[test]
    fn corpus_nll_matches_training_loss() {
        let (c, v, mc) = small();
        let model = Model::<f64>::init(mc.clone(), 4).unwrap();
        let data = EncodedCorpus::new(&c, &v, mc.max_len).unwrap();
        let (total, n) = corpus_nll(&model, &data, 100).unwrap();
        let b = data.in_order(100).next().unwrap();
        let mut g = Graph::new();
        let p = model.bind(&mut g, |_| false);
        let logits = model
            .forward_graph(&mut g, &p, &b.inputs, b.batch, b.len, &b.conds, CrossMode::Attend)
            .unwrap();
        let loss = g.cross_entropy_logits(logits, &b.targets, &b.mask).unwrap();
        assert_eq!(n, data.token_count());
        assert!((total / n as f64 - g.value(loss).data()[0]).abs() < 1e-12);
    }
}
