//! Metrics over generated molecule sets.
//!
//! Every metric except validity looks only at the valid molecules, in their
//! canonical form.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use molforge_chem::{
    canonical_smiles, fingerprint, fragment, parse, simple_descriptors, tanimoto, ChemError, DescriptorVector, Fingerprint,
    MolGraph,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FP_WIDTH: usize = 1024;
pub const FP_RADIUS: u32 = 2;

fn mol(s: &str) -> Result<MolGraph> {
    parse(s).map_err(|e| Error::Chem(ChemError::from(e)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Validity {
    pub n_generated: usize,
    pub fraction: f64,
    /// Canonical forms of the valid inputs, in input order.
    pub valid: Vec<String>,
}

/// Fraction of inputs that parse and validate. Empty strings count as
/// invalid.
pub fn validity<S: AsRef<str> + Sync>(gen: &[S]) -> Validity {
    let canon: Vec<Option<String>> = gen
        .par_iter()
        .map(|s| {
            let s = s.as_ref();
            (!s.is_empty()).then(|| canonical_smiles(s).ok()).flatten()
        })
        .collect();
    let valid: Vec<String> = canon.into_iter().flatten().collect();
    Validity {
        n_generated: gen.len(),
        fraction: if gen.is_empty() { 0.0 } else { valid.len() as f64 / gen.len() as f64 },
        valid,
    }
}

/// Distinct strings among the first `k`, over `min(k, len)`; 0 when empty.
pub fn unique_at(valid: &[String], k: usize) -> f64 {
    let head = &valid[..k.min(valid.len())];
    if head.is_empty() {
        return 0.0;
    }
    head.iter().collect::<HashSet<_>>().len() as f64 / head.len() as f64
}

/// Fraction of distinct valid strings that are absent from `train`.
pub fn novelty(valid: &[String], train: &HashSet<String>) -> f64 {
    let distinct: HashSet<&String> = valid.iter().collect();
    if distinct.is_empty() {
        return 0.0;
    }
    distinct.iter().filter(|s| !train.contains(**s)).count() as f64 / distinct.len() as f64
}

/// Mean over `gen` of the best Tanimoto similarity to any of `refs`.
pub fn snn(gen: &[Fingerprint], refs: &[Fingerprint]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::EmptyReference);
    }
    if gen.is_empty() {
        return Err(Error::EmptyInput);
    }
    let best: Vec<f64> = gen
        .par_iter()
        .map(|g| {
            refs.iter().try_fold(0.0f64, |m, r| Ok::<_, Error>(m.max(tanimoto(g, r)?)))
        })
        .collect::<Result<_>>()?;
    Ok(best.iter().sum::<f64>() / gen.len() as f64)
}

/// Fragment multiset counts over a set of molecules.
pub fn fragment_counts<S: AsRef<str> + Sync>(mols: &[S]) -> Result<BTreeMap<String, usize>> {
    let frags: Vec<Vec<String>> = mols
        .par_iter()
        .map(|s| Ok(fragment(&mol(s.as_ref())?)?))
        .collect::<Result<_>>()?;
    let mut counts = BTreeMap::new();
    for f in frags.into_iter().flatten() {
        *counts.entry(f).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Cosine similarity of two count vectors over the union of their keys.
pub fn cosine(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, &x)| b.get(k).map(|&y| x as f64 * y as f64)).sum();
    let norm = |m: &BTreeMap<String, usize>| m.values().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).min(1.0)
    }
}

/// Cosine similarity of fragment frequencies between two molecule sets.
pub fn frag_similarity<S: AsRef<str> + Sync>(gen: &[S], refs: &[S]) -> Result<f64> {
    if gen.is_empty() || refs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(cosine(&fragment_counts(gen)?, &fragment_counts(refs)?))
}

/// 1-D Wasserstein-1 distance between two empirical distributions: the
/// integral over `u` in (0, 1) of the gap between their quantile functions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sorted = |x: &[f64]| {
        let mut v = x.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len(), b.len());
    // Quantile breakpoints are i/n and j/m; walk them in order on the
    // common denominator n*m.
    let (mut i, mut j, mut at, mut total) = (0usize, 0usize, 0usize, 0.0);
    while i < n && j < m {
        let next = ((i + 1) * m).min((j + 1) * n);
        total += (next - at) as f64 * (a[i] - b[j]).abs();
        at = next;
        if (i + 1) * m == next {
            i += 1;
        }
        if (j + 1) * n == next {
            j += 1;
        }
    }
    Ok(total / (n * m) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub count_gen: Vec<usize>,
    pub count_ref: Vec<usize>,
}

/// Shared equal-width bins over the joint range of both samples.
pub fn histogram(gen: &[f64], refs: &[f64], bins: usize) -> Histogram {
    let all = gen.iter().chain(refs);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0; bins];
        for &x in xs {
            c[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    Histogram {
        edges,
        count_gen: count(gen),
        count_ref: count(refs),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintSettings {
    pub radius: u32,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_generated: usize,
    pub n_valid: usize,
    pub valid: f64,
    pub unique_at_1k: f64,
    pub unique_at_10k: f64,
    pub novelty: f64,
    /// `None` when nothing generated is valid.
    pub snn: Option<f64>,
    /// Cosine over the simplified fragment rule, not BRICS.
    pub frag_surrogate: Option<f64>,
    pub property_w1: BTreeMap<String, f64>,
    pub histograms: BTreeMap<String, Histogram>,
    pub fingerprint: FingerprintSettings,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows `property,bin_left,bin_right,count_gen,count_ref`.
    pub fn histograms_csv(&self) -> String {
        let mut out = String::from("property,bin_left,bin_right,count_gen,count_ref\n");
        for (name, h) in &self.histograms {
            for i in 0..h.count_gen.len() {
                out.push_str(&format!(
                    "{name},{},{},{},{}\n",
                    h.edges[i],
                    h.edges[i + 1],
                    h.count_gen[i],
                    h.count_ref[i]
                ));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    pub radius: u32,
    pub width: usize,
    pub bins: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            radius: FP_RADIUS,
            width: FP_WIDTH,
            bins: 20,
        }
    }
}

pub fn fingerprints<S: AsRef<str> + Sync>(mols: &[S], radius: u32, width: usize) -> Result<Vec<Fingerprint>> {
    mols.par_iter()
        .map(|s| Ok(fingerprint(&mol(s.as_ref())?, radius, width)?))
        .collect()
}

fn descriptors<S: AsRef<str> + Sync>(mols: &[S]) -> Result<Vec<[f64; 5]>> {
    mols.par_iter()
        .map(|s| Ok(simple_descriptors(&mol(s.as_ref())?)?.values()))
        .collect()
}

/// All metrics of `gen` against a training set (novelty) and a test set
/// (SNN, fragments, property distances). Reference strings that fail
/// validation are ignored.
pub fn full_report<S: AsRef<str> + Sync>(
    gen: &[S],
    train: &[S],
    test: &[S],
    opts: &ReportOptions,
) -> Result<EvalReport> {
    let v = validity(gen);
    let train_set: HashSet<String> = validity(train).valid.into_iter().collect();
    let test_valid = validity(test).valid;
    if test_valid.is_empty() {
        return Err(Error::EmptyReference);
    }
    let mut report = EvalReport {
        n_generated: v.n_generated,
        n_valid: v.valid.len(),
        valid: v.fraction,
        unique_at_1k: unique_at(&v.valid, 1000),
        unique_at_10k: unique_at(&v.valid, 10_000),
        novelty: novelty(&v.valid, &train_set),
        snn: None,
        frag_surrogate: None,
        property_w1: BTreeMap::new(),
        histograms: BTreeMap::new(),
        fingerprint: FingerprintSettings {
            radius: opts.radius,
            width: opts.width,
        },
    };
    if v.valid.is_empty() {
        return Ok(report);
    }
    let gen_fp = fingerprints(&v.valid, opts.radius, opts.width)?;
    let ref_fp = fingerprints(&test_valid, opts.radius, opts.width)?;
    report.snn = Some(snn(&gen_fp, &ref_fp)?);
    report.frag_surrogate = Some(frag_similarity(&v.valid, &test_valid)?);
    let (gd, rd) = (descriptors(&v.valid)?, descriptors(&test_valid)?);
    for (k, name) in DescriptorVector::NAMES.iter().enumerate() {
        let a: Vec<f64> = gd.iter().map(|d| d[k]).collect();
        let b: Vec<f64> = rd.iter().map(|d| d[k]).collect();
        report.property_w1.insert(name.to_string(), wasserstein1(&a, &b)?);
        report.histograms.insert(name.to_string(), histogram(&a, &b, opts.bins));
    }
    Ok(report)
}

/// Writes `smiles,label,bit0..bit{width-1}` with one row per molecule.
pub fn fp_export<S: AsRef<str> + Sync>(
    mols: &[S],
    labels: &[String],
    path: &Path,
    radius: u32,
    width: usize,
) -> Result<()> {
    if labels.len() != mols.len() {
        return Err(Error::InvalidConfig(format!(
            "{} labels for {} molecules",
            labels.len(),
            mols.len()
        )));
    }
    let canon: Vec<String> = mols
        .par_iter()
        .map(|s| Ok(canonical_smiles(s.as_ref())?))
        .collect::<Result<_>>()?;
    let fps = fingerprints(mols, radius, width)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["smiles".to_string(), "label".to_string()];
    header.extend((0..width).map(|i| format!("bit{i}")));
    w.write_record(&header)?;
    for ((s, label), fp) in canon.iter().zip(labels).zip(&fps) {
        let mut row = vec![s.clone(), label.clone()];
        row.extend((0..width).map(|i| if fp.get(i) { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Canonical forms of a set, for novelty lookups.
pub fn canonical_set<S: AsRef<str> + Sync>(mols: &[S]) -> HashSet<String> {
    validity(mols).valid.into_iter().collect()
}
