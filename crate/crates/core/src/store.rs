//! Corpus loading, batching and checkpoint files.
//!
//! Checkpoint layout: the 8 bytes `MGFORGE1`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then every tensor listed in the header
//! manifest as little-endian IEEE-754 `f32` values, in manifest order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use molforge_tensor::{rng, Adam, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tokenizer::{encode_strict, tokenize, Vocab, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entry {
    pub smiles: String,
    pub condition: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub entries: Vec<Entry>,
    pub split: Split,
    /// 1-based file rows skipped in lenient mode.
    pub skipped: Vec<usize>,
}

impl Corpus {
    pub fn smiles(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.smiles.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_row(smiles: &str) -> std::result::Result<(), String> {
    tokenize(smiles).map_err(|e| e.to_string())?;
    let mol = molforge_chem::parse(smiles).map_err(|e| e.to_string())?;
    match molforge_chem::validate(&mol) {
        molforge_chem::ValidityVerdict::Valid => Ok(()),
        molforge_chem::ValidityVerdict::Invalid { atom, reason } => Err(format!("{reason} at atom {atom}")),
    }
}

/// Reads an unconditional corpus: a CSV with a `SMILES` column and an
/// optional `SPLIT` column, or plain text with one SMILES per line. Rows of
/// other splits are left out. Invalid rows are an error unless `lenient`.
pub fn load_pretrain(path: &Path, split: Split, lenient: bool) -> Result<Corpus> {
    let mut first = String::new();
    BufReader::new(fs::File::open(path)?).read_line(&mut first)?;
    let is_csv = first
        .trim_end()
        .split(',')
        .any(|f| f.trim().eq_ignore_ascii_case("smiles"));
    let mut corpus = Corpus {
        entries: Vec::new(),
        split,
        skipped: Vec::new(),
    };
    let accept = |row: usize, smiles: &str, corpus: &mut Corpus| -> Result<()> {
        match check_row(smiles) {
            Ok(()) => corpus.entries.push(Entry {
                smiles: smiles.to_string(),
                condition: 0,
            }),
            Err(reason) if !lenient => {
                return Err(Error::UnparseableRow {
                    path: path.to_path_buf(),
                    row,
                    reason,
                })
            }
            Err(_) => corpus.skipped.push(row),
        }
        Ok(())
    };
    if is_csv {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let smiles_col = col("smiles").ok_or_else(|| missing(path, "SMILES"))?;
        let split_col = col("split");
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = i + 2;
            if let Some(c) = split_col {
                let tag = record.get(c).unwrap_or("");
                match Split::parse(tag) {
                    Some(s) if s == split => {}
                    Some(_) => continue,
                    None if lenient => {
                        corpus.skipped.push(row);
                        continue;
                    }
                    None => {
                        return Err(Error::UnparseableRow {
                            path: path.to_path_buf(),
                            row,
                            reason: format!("unknown split {tag:?}"),
                        })
                    }
                }
            }
            accept(row, record.get(smiles_col).unwrap_or("").trim(), &mut corpus)?;
        }
    } else {
        let text = fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if !line.is_empty() {
                accept(i + 1, line, &mut corpus)?;
            }
        }
    }
    Ok(corpus)
}

fn missing(path: &Path, column: &str) -> Error {
    Error::MissingColumn {
        path: path.to_path_buf(),
        column: column.to_string(),
    }
}

/// Reads a conditional corpus: CSV with columns `smiles,target`. Target
/// `targets[i]` maps to condition id `i + 1`.
pub fn load_finetune(path: &Path, targets: &[String]) -> Result<Corpus> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let smiles_col = col("smiles").ok_or_else(|| missing(path, "smiles"))?;
    let target_col = col("target").ok_or_else(|| missing(path, "target"))?;
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let name = record.get(target_col).unwrap_or("").trim();
        let condition = targets
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::UnknownTargetName {
                row,
                name: name.to_string(),
            })?
            + 1;
        let smiles = record.get(smiles_col).unwrap_or("").trim();
        check_row(smiles).map_err(|reason| Error::UnparseableRow {
            path: path.to_path_buf(),
            row,
            reason,
        })?;
        entries.push(Entry {
            smiles: smiles.to_string(),
            condition,
        });
    }
    Ok(Corpus {
        entries,
        split: Split::Train,
        skipped: Vec::new(),
    })
}

/// Batches per length-sorting window in [`EncodedCorpus::epoch_bucketed`].
pub const BUCKET_WINDOW: usize = 32;

/// One padded training batch. Rows are `BOS t1 .. tn` as inputs and
/// `t1 .. tn EOS` as targets; padding has `mask == false`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    pub conds: Vec<usize>,
    pub batch: usize,
    pub len: usize,
    /// Corpus index of each row.
    pub rows: Vec<usize>,
}

/// A corpus encoded once under a vocabulary.
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    seqs: Vec<Vec<usize>>,
    conds: Vec<usize>,
    index: Vec<usize>,
    dropped: usize,
}

impl EncodedCorpus {
    /// Encodes every entry; sequences longer than `max_len` (counting BOS
    /// and EOS) are dropped and counted.
    pub fn new(corpus: &Corpus, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let mut out = EncodedCorpus {
            seqs: Vec::new(),
            conds: Vec::new(),
            index: Vec::new(),
            dropped: 0,
        };
        for (i, e) in corpus.entries.iter().enumerate() {
            let ids = encode_strict(&e.smiles, vocab)?.ids;
            if ids.len() > max_len {
                out.dropped += 1;
                continue;
            }
            out.seqs.push(ids);
            out.conds.push(e.condition);
            out.index.push(i);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn token_count(&self) -> usize {
        self.seqs.iter().map(|s| s.len() - 1).sum()
    }

    /// Keeps only entries with the given condition.
    pub fn filter_condition(&self, cond: usize) -> EncodedCorpus {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.conds[i] == cond).collect();
        EncodedCorpus {
            seqs: keep.iter().map(|&i| self.seqs[i].clone()).collect(),
            conds: keep.iter().map(|&i| self.conds[i]).collect(),
            index: keep.iter().map(|&i| self.index[i]).collect(),
            dropped: 0,
        }
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.len().div_ceil(batch_size.max(1))
    }

    /// Batches of one epoch. The order is a shuffle drawn from stream
    /// `epoch` of `seed`.
    pub fn epoch(&self, batch_size: usize, seed: u64, epoch: u64) -> impl Iterator<Item = Batch> + '_ {
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng::shuffle(&mut rng::stream(seed, epoch), &mut order);
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |rows| self.batch(&rows))
    }

    /// Like [`EncodedCorpus::epoch`], but each window of
    /// [`BUCKET_WINDOW`] shuffled batches is sorted by length before it is
    /// cut, and the batch order is shuffled again afterwards.
    pub fn epoch_bucketed(&self, batch_size: usize, seed: u64, epoch: u64) -> impl Iterator<Item = Batch> + '_ {
        let size = batch_size.max(1);
        let mut r = rng::stream(seed, epoch);
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng::shuffle(&mut r, &mut order);
        let mut chunks: Vec<Vec<usize>> = Vec::with_capacity(self.batches_per_epoch(size));
        for window in order.chunks_mut(size * BUCKET_WINDOW) {
            window.sort_by_key(|&i| self.seqs[i].len());
            chunks.extend(window.chunks(size).map(<[usize]>::to_vec));
        }
        rng::shuffle(&mut r, &mut chunks);
        chunks.into_iter().map(move |rows| self.batch(&rows))
    }

    /// Batches in corpus order, for evaluation.
    pub fn in_order(&self, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
        let rows: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = rows.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |rows| self.batch(&rows))
    }

    fn batch(&self, rows: &[usize]) -> Batch {
        let len = rows.iter().map(|&r| self.seqs[r].len() - 1).max().unwrap_or(1);
        let mut b = Batch {
            inputs: vec![PAD; rows.len() * len],
            targets: vec![PAD; rows.len() * len],
            mask: vec![false; rows.len() * len],
            conds: rows.iter().map(|&r| self.conds[r]).collect(),
            batch: rows.len(),
            len,
            rows: rows.iter().map(|&r| self.index[r]).collect(),
        };
        for (k, &r) in rows.iter().enumerate() {
            let s = &self.seqs[r];
            for t in 0..s.len() - 1 {
                b.inputs[k * len + t] = s[t];
                b.targets[k * len + t] = s[t + 1];
                b.mask[k * len + t] = true;
            }
        }
        b
    }
}

/// Batches of one epoch of `corpus`; see [`EncodedCorpus::epoch`].
pub fn batch_iter(
    corpus: &Corpus,
    vocab: &Vocab,
    batch_size: usize,
    max_len: usize,
    seed: u64,
    epoch: u64,
) -> Result<(Vec<Batch>, usize)> {
    let enc = EncodedCorpus::new(corpus, vocab, max_len)?;
    let batches = enc.epoch(batch_size, seed, epoch).collect();
    Ok((batches, enc.dropped()))
}

pub const MAGIC: &[u8; 8] = b"MGFORGE1";
pub const FORMAT_VERSION: u32 = 1;

/// Adam moments stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn from_adam<T: Scalar>(adam: &Adam<T>, shapes: &[Vec<usize>]) -> Self {
        let (m, v) = adam.moments();
        let conv = |xs: &[Vec<T>]| -> Vec<Tensor<f32>> {
            xs.iter()
                .zip(shapes)
                .map(|(x, s)| Tensor::new(s, x.iter().map(|&a| a.to_f32().unwrap()).collect()).unwrap())
                .collect()
        };
        OptimizerState {
            step: adam.step_count(),
            m: conv(m),
            v: conv(v),
        }
    }

    pub fn to_adam<T: Scalar>(&self) -> Result<Adam<T>> {
        let conv = |xs: &[Tensor<f32>]| xs.iter().map(|t| t.cast::<T>().into_data()).collect();
        Ok(Adam::from_parts(self.step, conv(&self.m), conv(&self.v))?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub vocab: Vocab,
    /// Names of conditions 1.. (condition 0 is "none").
    pub conditions: Vec<String>,
    pub params: Vec<Tensor<f32>>,
    pub optimizer: Option<OptimizerState>,
    pub seed: u64,
    /// Free-form record of how the checkpoint was produced.
    pub provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    vocab: Vocab,
    conditions: Vec<String>,
    optimizer_state: bool,
    adam_step: u64,
    seed: u64,
    provenance: serde_json::Value,
    manifest: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &Model<T>,
        vocab: &Vocab,
        conditions: &[String],
        adam: Option<&Adam<T>>,
        seed: u64,
        provenance: serde_json::Value,
    ) -> Self {
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
        Checkpoint {
            model_config: model.config().clone(),
            vocab: vocab.clone(),
            conditions: conditions.to_vec(),
            params: model.params().iter().map(Tensor::cast).collect(),
            optimizer: adam.map(|a| OptimizerState::from_adam(a, &shapes)),
            seed,
            provenance,
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<Model<T>> {
        Model::from_parts(self.model_config.clone(), self.params.iter().map(Tensor::cast).collect())
    }

    /// Condition id for a name; `none` (any case) is 0.
    pub fn condition_id(&self, name: &str) -> Result<usize> {
        if name.eq_ignore_ascii_case("none") {
            return Ok(0);
        }
        self.conditions
            .iter()
            .position(|c| c == name)
            .map(|i| i + 1)
            .ok_or_else(|| Error::UnknownTargetName {
                row: 0,
                name: name.to_string(),
            })
    }

    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let names: Vec<String> = self.model_config.layout().into_iter().map(|(n, _)| n).collect();
        let mut out: Vec<(String, &Tensor<f32>)> = names.iter().cloned().zip(&self.params).collect();
        if let Some(opt) = &self.optimizer {
            out.extend(names.iter().map(|n| format!("adam.m.{n}")).zip(&opt.m));
            out.extend(names.iter().map(|n| format!("adam.v.{n}")).zip(&opt.v));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut offset = 0;
        let manifest = tensors
            .iter()
            .map(|(name, t)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len();
                e
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            model_config: self.model_config.clone(),
            vocab: self.vocab.clone(),
            conditions: self.conditions.clone(),
            optimizer_state: self.optimizer.is_some(),
            adam_step: self.optimizer.as_ref().map_or(0, |o| o.step),
            seed: self.seed,
            provenance: self.provenance.clone(),
            manifest,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::CorruptHeader("missing magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::CorruptHeader("header length exceeds file".into()))?;
        let raw: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        let found = raw.get("format_version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: v as u32,
                    expected: FORMAT_VERSION,
                })
            }
            None => return Err(Error::CorruptHeader("no format_version".into())),
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        let layout = header.model_config.layout();
        let copies = if header.optimizer_state { 3 } else { 1 };
        if header.manifest.len() != layout.len() * copies {
            return Err(Error::CorruptHeader("manifest does not match the model layout".into()));
        }
        let mut expected = 0;
        for (i, e) in header.manifest.iter().enumerate() {
            let (name, shape) = &layout[i % layout.len()];
            if e.offset != expected || &e.shape != shape || !e.name.ends_with(name.as_str()) {
                return Err(Error::CorruptHeader(format!("manifest entry {} is inconsistent", e.name)));
            }
            expected += 4 * shape.iter().product::<usize>();
        }
        let payload = &bytes[12 + hlen..];
        if payload.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected,
                actual: payload.len(),
            });
        }
        let mut tensors = header.manifest.iter().map(|e| {
            let n: usize = e.shape.iter().product();
            let data = payload[e.offset..e.offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::new(&e.shape, data).unwrap()
        });
        let params: Vec<Tensor<f32>> = tensors.by_ref().take(layout.len()).collect();
        let optimizer = header.optimizer_state.then(|| OptimizerState {
            step: header.adam_step,
            m: tensors.by_ref().take(layout.len()).collect(),
            v: tensors.by_ref().take(layout.len()).collect(),
        });
        Ok(Checkpoint {
            model_config: header.model_config,
            vocab: header.vocab,
            conditions: header.conditions,
            params,
            optimizer,
            seed: header.seed,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// Reads a text file of SMILES, one per line, keeping empty lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(|l| l.trim().to_string()).collect())
}
