//! `molforge`: pre-training, fine-tuning, sampling and evaluation of the
//! conditional SMILES generator.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 model or checkpoint
//! error, 5 internal error. Failures print one JSON object to stderr:
//! `{"error": {"class": .., "kind": .., "message": ..}}`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use molforge::eval::{self, ReportOptions};
use molforge::model::ModelConfig;
use molforge::sample::{Generator, Sample, SampleConfig};
use molforge::store::{load_finetune, load_pretrain, read_lines, Checkpoint, Corpus, Split};
use molforge::tokenizer::build_vocab;
use molforge::train::{finetune, pretrain, TrainConfig};
use molforge::{Error, ErrorClass};
use molforge_chem::{parse, validate, ValidityVerdict};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(name = "molforge", version, about = "Conditional transformer SMILES generator")]
struct Cli {
    /// Worker threads (default: one per core). Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unconditional pre-training on a SMILES corpus.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint on <smiles, target> pairs.
    Finetune(FinetuneArgs),
    /// Sample SMILES from a checkpoint.
    Sample(SampleArgs),
    /// Metric report of a generated set against train and test references.
    Eval(EvalArgs),
    /// Per-line validity verdicts and the valid fraction.
    Validate(ValidateArgs),
    /// Fingerprint table for external chemical-space projection.
    FpExport(FpExportArgs),
}

/// Settings file layout. Every section and field is optional.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    model: ModelSection,
    train: TrainConfig,
    sample: SampleConfig,
}

#[derive(Default, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
struct ModelSection {
    /// Decoder layers [default: 4].
    #[arg(long)]
    n_layers: Option<usize>,
    /// Attention heads per sublayer [default: 8].
    #[arg(long)]
    n_heads: Option<usize>,
    /// Embedding width [default: 256].
    #[arg(long)]
    d_model: Option<usize>,
    /// Feed-forward hidden width [default: 1024].
    #[arg(long)]
    d_ffn: Option<usize>,
    /// Longest sequence in tokens, counting BOS and EOS [default: 128].
    #[arg(long)]
    max_len: Option<usize>,
    /// Memory slots per condition embedding [default: 1].
    #[arg(long)]
    n_condition_slots: Option<usize>,
}

impl ModelSection {
    fn apply(&self, c: &mut ModelConfig) {
        let set = |dst: &mut usize, src: Option<usize>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut c.n_layers, self.n_layers);
        set(&mut c.n_heads, self.n_heads);
        set(&mut c.d_model, self.d_model);
        set(&mut c.d_ffn, self.d_ffn);
        set(&mut c.max_len, self.max_len);
        set(&mut c.n_condition_slots, self.n_condition_slots);
    }
}

fn serde_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainOverrides {
    /// Passes over the corpus [default: 10].
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Stop after this much wall-clock time.
    #[arg(long, value_name = "SECS")]
    time_limit_secs: Option<f64>,
    /// Sequences per batch [default: 64].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak Adam learning rate [default: 3e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// constant | warmup-linear-decay [default: warmup-linear-decay]
    #[arg(long, value_parser = serde_name::<molforge::train::LrSchedule>)]
    lr_schedule: Option<molforge::train::LrSchedule>,
    /// Linear warmup length [default: 1000].
    #[arg(long)]
    warmup_steps: Option<u64>,
    /// Training seed: initialization, batch order and new condition rows.
    #[arg(long = "train-seed")]
    seed: Option<u64>,
    /// Global gradient norm limit [default: 1.0].
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    /// Steps between metric records; 0 records once per epoch.
    #[arg(long)]
    eval_every: Option<u64>,
    /// f32 | f64 [default: f32]
    #[arg(long, value_parser = serde_name::<molforge::model::Precision>)]
    precision: Option<molforge::model::Precision>,
    /// Fine-tuning only: all-weights | condition-embeddings-only [default: all-weights]
    #[arg(long, value_parser = serde_name::<molforge::train::FinetuneScope>)]
    finetune_scope: Option<molforge::train::FinetuneScope>,
    /// Fine-tuning only: train one target after another instead of mixing.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    sequential_targets: Option<bool>,
    /// Batch sequences of similar length together.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    bucket_by_length: Option<bool>,
}

impl TrainOverrides {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        if self.time_limit_secs.is_some() {
            c.time_limit_secs = self.time_limit_secs;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.lr_schedule {
            c.lr_schedule = v;
        }
        if let Some(v) = self.warmup_steps {
            c.warmup_steps = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.grad_clip_norm {
            c.grad_clip_norm = v;
        }
        if let Some(v) = self.eval_every {
            c.eval_every = v;
        }
        if let Some(v) = self.precision {
            c.precision = v;
        }
        if let Some(v) = self.finetune_scope {
            c.finetune_scope = v;
        }
        if let Some(v) = self.sequential_targets {
            c.sequential_targets = v;
        }
        if let Some(v) = self.bucket_by_length {
            c.bucket_by_length = v;
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    /// CSV with a SMILES column (and optional SPLIT column) or one SMILES per line.
    #[arg(long)]
    data: PathBuf,
    /// train | test: rows of this split are used when the file has a SPLIT column.
    #[arg(long, default_value = "train", value_parser = serde_name::<Split>)]
    split: Split,
    /// Held-out corpus scored at every metric record.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Split read from the held-out file.
    #[arg(long, default_value = "test", value_parser = serde_name::<Split>)]
    heldout_split: Split,
    /// Skip invalid rows instead of failing.
    #[arg(long)]
    lenient: bool,
    /// JSON settings file with optional "model" and "train" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines metric log (default: <out>.metrics.jsonl).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    model: ModelSection,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pre-trained checkpoint.
    #[arg(long)]
    base: PathBuf,
    /// CSV with columns smiles,target.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated target names; the i-th becomes condition i+1.
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<String>,
    /// Held-out pairs in the same format.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// JSON settings file with an optional "train" section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines metric log (default: <out>.metrics.jsonl).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args)]
struct SampleArgs {
    /// Checkpoint to sample from.
    #[arg(long)]
    ckpt: PathBuf,
    /// Target name, or "none" for unconditional sampling.
    #[arg(long, default_value = "none")]
    cond: String,
    /// Number of samples.
    #[arg(short = 'n', long = "num", default_value_t = 1000)]
    n: usize,
    /// JSON settings file with an optional "sample" section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Softmax temperature; 0 decodes greedily [default: 1.0].
    #[arg(long)]
    temp: Option<f64>,
    /// Sample only among the k most likely tokens.
    #[arg(long)]
    top_k: Option<usize>,
    /// Length limit counting BOS and EOS [default: the model's].
    #[arg(long)]
    max_len: Option<usize>,
    /// Sampling seed; sample i uses stream i [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// One SMILES per line; truncated samples are empty lines (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write smiles,condition,nll,truncated rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Generated SMILES, one per line.
    #[arg(long)]
    gen: PathBuf,
    /// Training reference for novelty (CSV or one SMILES per line).
    #[arg(long)]
    train: PathBuf,
    /// Split read from the training reference file.
    #[arg(long, default_value = "train", value_parser = serde_name::<Split>)]
    train_split: Split,
    /// Test reference for SNN, fragments and property distances.
    #[arg(long)]
    test: PathBuf,
    /// Split read from the test reference file.
    #[arg(long, default_value = "test", value_parser = serde_name::<Split>)]
    test_split: Split,
    /// Skip invalid reference rows instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Fingerprint radius.
    #[arg(long, default_value_t = eval::FP_RADIUS)]
    radius: u32,
    /// Fingerprint width in bits.
    #[arg(long, default_value_t = eval::FP_WIDTH)]
    width: usize,
    /// Histogram bins per property.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Report JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Property histograms as CSV.
    #[arg(long)]
    histograms: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// SMILES file, one per line.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct FpExportArgs {
    /// Valid SMILES, one per line; empty lines are skipped.
    #[arg(long = "in")]
    input: PathBuf,
    /// Value of the label column for every row.
    #[arg(long)]
    label: String,
    /// CSV to write: smiles,label,bit0..
    #[arg(long)]
    out: PathBuf,
    /// Fingerprint radius.
    #[arg(long, default_value_t = eval::FP_RADIUS)]
    radius: u32,
    /// Fingerprint width in bits.
    #[arg(long, default_value_t = eval::FP_WIDTH)]
    width: usize,
}

enum Failure {
    Usage(String),
    Lib(Error),
    /// Any failure to read a checkpoint, including I/O.
    Checkpoint(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl Failure {
    fn report(&self) -> (u8, serde_json::Value) {
        let (code, class, kind, message) = match self {
            Failure::Usage(m) => (2, "usage", "Usage", m.clone()),
            Failure::Checkpoint(e) => (4, "model", e.kind(), e.to_string()),
            Failure::Lib(e) => {
                let (code, class) = match e.class() {
                    ErrorClass::Data => (3, "data"),
                    ErrorClass::Model => (4, "model"),
                    ErrorClass::Internal => (5, "internal"),
                };
                (code, class, e.kind(), e.to_string())
            }
        };
        (code, json!({"error": {"class": class, "kind": kind, "message": message}}))
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail(Failure::Usage(e.to_string().trim_end().to_string())),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(Failure::Usage("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(Failure::Usage(e.to_string()));
        }
    }
    let result = match &cli.command {
        Command::Pretrain(a) => run_pretrain(a),
        Command::Finetune(a) => run_finetune(a),
        Command::Sample(a) => run_sample(a),
        Command::Eval(a) => run_eval(a),
        Command::Validate(a) => run_validate(a),
        Command::FpExport(a) => run_fp_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    let (code, body) = f.report();
    eprintln!("{body}");
    ExitCode::from(code)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(Failure::Checkpoint)
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?).map_err(Error::from)?),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn open_metrics(explicit: Option<&Path>, out: &Path) -> Result<BufWriter<File>, Failure> {
    let path = explicit.map_or_else(|| with_suffix(out, ".metrics.jsonl"), Path::to_path_buf);
    Ok(BufWriter::new(File::create(path)?))
}

fn summary(steps: u64, dropped: usize, losses: &[f64], out: &Path) {
    let last = losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "{}",
        json!({"steps": steps, "dropped": dropped, "final_train_nll_per_token": last, "checkpoint": out})
    );
}

fn run_pretrain(a: &PretrainArgs) -> Outcome {
    let file = load_config(a.config.as_deref())?;
    let corpus = load_pretrain(&a.data, a.split, a.lenient)?;
    let heldout = a
        .heldout
        .as_deref()
        .map(|p| load_pretrain(p, a.heldout_split, a.lenient))
        .transpose()?;
    let vocab = build_vocab(corpus.smiles().chain(heldout.iter().flat_map(Corpus::smiles)))?;
    let mut mc = ModelConfig::default_for(vocab.len(), 1);
    file.model.apply(&mut mc);
    a.model.apply(&mut mc);
    let mut cfg = file.train;
    a.train.apply(&mut cfg);
    let mut metrics = open_metrics(a.metrics.as_deref(), &a.out)?;
    let mut out = pretrain(&corpus, heldout.as_ref(), &vocab, &mc, &cfg, Some(&mut metrics))?;
    metrics.flush()?;
    out.checkpoint.provenance["run"] = json!({
        "command": "pretrain",
        "data": a.data,
        "split": a.split,
        "heldout": a.heldout,
        "heldout_split": a.heldout_split,
        "lenient": a.lenient,
        "model_config": out.checkpoint.model_config,
        "skipped_rows": corpus.skipped.len(),
    });
    out.checkpoint.save(&a.out)?;
    summary(out.steps, out.dropped, &out.losses, &a.out);
    Ok(())
}

fn run_finetune(a: &FinetuneArgs) -> Outcome {
    let file = load_config(a.config.as_deref())?;
    let base = load_checkpoint(&a.base)?;
    let corpus = load_finetune(&a.data, &a.targets)?;
    let heldout = a.heldout.as_deref().map(|p| load_finetune(p, &a.targets)).transpose()?;
    let mut cfg = file.train;
    a.train.apply(&mut cfg);
    let mut metrics = open_metrics(a.metrics.as_deref(), &a.out)?;
    let mut out = finetune(&base, &corpus, &a.targets, heldout.as_ref(), &cfg, Some(&mut metrics))?;
    metrics.flush()?;
    out.checkpoint.provenance["run"] = json!({
        "command": "finetune",
        "base": a.base,
        "base_provenance": base.provenance,
        "data": a.data,
        "targets": a.targets,
        "heldout": a.heldout,
    });
    out.checkpoint.save(&a.out)?;
    summary(out.steps, out.dropped, &out.losses, &a.out);
    Ok(())
}

fn run_sample(a: &SampleArgs) -> Outcome {
    let file = load_config(a.config.as_deref())?;
    let mut cfg = file.sample;
    if let Some(t) = a.temp {
        cfg.temperature = t;
    }
    if a.top_k.is_some() {
        cfg.top_k = a.top_k;
    }
    if a.max_len.is_some() {
        cfg.max_len = a.max_len;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let cond = ckpt.condition_id(&a.cond).map_err(|_| {
        Error::ConfigMismatch(format!(
            "checkpoint has no target {:?}; known: none, {}",
            a.cond,
            ckpt.conditions.join(", ")
        ))
    })?;
    let mut lines: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut table = match &a.csv {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "smiles,condition,nll,truncated")?;
            Some(w)
        }
        None => None,
    };
    let mut emit = |s: Sample| -> molforge::Result<()> {
        let text = if s.truncated { "" } else { s.smiles.as_str() };
        writeln!(lines, "{text}")?;
        if let Some(w) = table.as_mut() {
            writeln!(w, "{},{},{},{}", s.smiles, a.cond, s.nll, s.truncated)?;
        }
        Ok(())
    };
    match ckpt.model_config.precision {
        molforge::model::Precision::F32 => {
            Generator::<f32>::new(ckpt.model()?, ckpt.vocab.clone())?.generate_each(cond, a.n, &cfg, &mut emit)?
        }
        molforge::model::Precision::F64 => {
            Generator::<f64>::new(ckpt.model()?, ckpt.vocab.clone())?.generate_each(cond, a.n, &cfg, &mut emit)?
        }
    }
    lines.flush()?;
    if let Some(mut w) = table {
        w.flush()?;
    }
    if let Some(p) = &a.out {
        write_json(
            &with_suffix(p, ".run.json"),
            &json!({
                "command": "sample",
                "checkpoint": a.ckpt,
                "checkpoint_provenance": ckpt.provenance,
                "condition": a.cond,
                "condition_id": cond,
                "n": a.n,
                "sample_config": cfg,
            }),
        )?;
    }
    Ok(())
}

fn smiles_of(c: Corpus) -> Vec<String> {
    c.entries.into_iter().map(|e| e.smiles).collect()
}

fn run_eval(a: &EvalArgs) -> Outcome {
    let gen = read_lines(&a.gen)?;
    let train = smiles_of(load_pretrain(&a.train, a.train_split, a.lenient)?);
    let test = smiles_of(load_pretrain(&a.test, a.test_split, a.lenient)?);
    let opts = ReportOptions {
        radius: a.radius,
        width: a.width,
        bins: a.bins,
    };
    let report = eval::full_report(&gen, &train, &test, &opts)?;
    fs::write(&a.out, report.to_json() + "\n")?;
    if let Some(h) = &a.histograms {
        fs::write(h, report.histograms_csv())?;
    }
    write_json(
        &with_suffix(&a.out, ".run.json"),
        &json!({
            "command": "eval",
            "gen": a.gen,
            "train": a.train,
            "train_split": a.train_split,
            "test": a.test,
            "test_split": a.test_split,
            "lenient": a.lenient,
            "radius": a.radius,
            "width": a.width,
            "bins": a.bins,
        }),
    )?;
    println!(
        "{}",
        json!({"valid": report.valid, "unique_at_1k": report.unique_at_1k, "novelty": report.novelty, "snn": report.snn, "frag_surrogate": report.frag_surrogate})
    );
    Ok(())
}

fn verdict(smiles: &str) -> Result<(), String> {
    if smiles.is_empty() {
        return Err("empty line".into());
    }
    let mol = parse(smiles).map_err(|e| e.to_string())?;
    match validate(&mol) {
        ValidityVerdict::Valid => Ok(()),
        ValidityVerdict::Invalid { atom, reason } => Err(format!("{reason} at atom {atom}")),
    }
}

fn run_validate(a: &ValidateArgs) -> Outcome {
    let lines = read_lines(&a.input)?;
    let mut out = BufWriter::new(io::stdout().lock());
    let mut valid = 0;
    for s in &lines {
        match verdict(s) {
            Ok(()) => {
                valid += 1;
                writeln!(out, "valid\t{s}")?;
            }
            Err(reason) => writeln!(out, "invalid\t{s}\t{reason}")?,
        }
    }
    let fraction = if lines.is_empty() { 0.0 } else { valid as f64 / lines.len() as f64 };
    writeln!(out, "valid fraction {fraction:.3} ({valid}/{})", lines.len())?;
    out.flush()?;
    Ok(())
}

fn run_fp_export(a: &FpExportArgs) -> Outcome {
    let lines = read_lines(&a.input)?;
    let mut mols = Vec::new();
    for (i, s) in lines.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        verdict(s).map_err(|reason| Error::UnparseableRow {
            path: a.input.clone(),
            row: i + 1,
            reason,
        })?;
        mols.push(s.clone());
    }
    let labels = vec![a.label.clone(); mols.len()];
    eval::fp_export(&mols, &labels, &a.out, a.radius, a.width)?;
    write_json(
        &with_suffix(&a.out, ".run.json"),
        &json!({"command": "fp-export", "in": a.input, "label": a.label, "radius": a.radius, "width": a.width}),
    )?;
    Ok(())
}
