//! Calibration, uncertainty and OOD-detection metrics.
//!
//! Calibration bins are half-open on the left: bin `m` (1-based) covers
//! `((m−1)/M, m/M]`, and confidences at or below `1/M` land in bin 1.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, entropy, Matrix, PROB_FLOOR};

pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    /// 1-based bin index.
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub acc: f64,
    pub conf: f64,
}

fn check_inputs(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() == 0 {
        return Err(Error::Empty("metrics need at least one prediction".into()));
    }
    if probs.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            probs.cols()
        )));
    }
    for (i, row) in probs.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// 1-based bin for a confidence in [0, 1].
pub fn bin_index(conf: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut b = (conf * m).ceil() as usize;
    // guard against rounding pushing an exact edge into the next bin
    if b > 1 && conf <= (b - 1) as f64 / m {
        b -= 1;
    }
    b.clamp(1, bins)
}

fn confidences(probs: &Matrix, labels: &[usize]) -> Vec<(f64, bool)> {
    probs
        .row_iter()
        .zip(labels)
        .map(|(p, &y)| {
            let k = argmax(p);
            (p[k], k == y)
        })
        .collect()
}

fn bins_from(samples: impl Iterator<Item = (f64, bool)>, bins: usize) -> Vec<BinStats> {
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for (c, ok) in samples {
        let b = bin_index(c, bins) - 1;
        count[b] += 1;
        conf_sum[b] += c;
        correct[b] += ok as usize;
    }
    (0..bins)
        .map(|b| {
            let n = count[b];
            let (acc, conf) = if n == 0 {
                (0.0, 0.0)
            } else {
                (correct[b] as f64 / n as f64, conf_sum[b] / n as f64)
            };
            BinStats {
                bin: b + 1,
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: n,
                acc,
                conf,
            }
        })
        .collect()
}

pub fn reliability_bins(probs: &Matrix, labels: &[usize], bins: usize) -> Result<Vec<BinStats>> {
    if bins == 0 {
        return Err(Error::invalid("at least one bin is required"));
    }
    check_inputs(probs, labels)?;
    Ok(bins_from(confidences(probs, labels).into_iter(), bins))
}

/// `Σ (|B_m| / denom) · |acc − conf|` over the given bins.
pub fn calibration_gap(bins: &[BinStats], denom: usize) -> f64 {
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / denom as f64 * (b.acc - b.conf).abs())
        .sum()
}

/// ECE recomputed from reliability bins.
pub fn ece_from_bins(bins: &[BinStats]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    calibration_gap(bins, n)
}

pub fn ece(probs: &Matrix, labels: &[usize], bins: usize) -> Result<f64> {
    Ok(ece_from_bins(&reliability_bins(probs, labels, bins)?))
}

/// Misclassification-normalised ECE. Undefined when nothing is wrong.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mece {
    Value(f64),
    NotApplicable,
}

impl Mece {
    pub fn value(self) -> Option<f64> {
        match self {
            Mece::Value(v) => Some(v),
            Mece::NotApplicable => None,
        }
    }
}

/// Which samples populate the bins before dividing by the error count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeceBins {
    /// Bins over every sample.
    #[default]
    All,
    /// Bins over misclassified samples only.
    Misclassified,
}

pub fn mece(probs: &Matrix, labels: &[usize], bins: usize, mode: MeceBins) -> Result<Mece> {
    if bins == 0 {
        return Err(Error::invalid("at least one bin is required"));
    }
    check_inputs(probs, labels)?;
    let samples = confidences(probs, labels);
    let wrong = samples.iter().filter(|(_, ok)| !ok).count();
    if wrong == 0 {
        return Ok(Mece::NotApplicable);
    }
    let stats = match mode {
        MeceBins::All => bins_from(samples.into_iter(), bins),
        MeceBins::Misclassified => bins_from(samples.into_iter().filter(|(_, ok)| !ok), bins),
    };
    Ok(Mece::Value(calibration_gap(&stats, wrong)))
}

pub fn nll(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let hits = confidences(probs, labels).iter().filter(|(_, ok)| *ok).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn brier(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let total: f64 = probs
        .row_iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let t = if k == y { 1.0 } else { 0.0 };
                    (v - t) * (v - t)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn mean_entropy(probs: &Matrix) -> Result<f64> {
    if probs.rows() == 0 {
        return Err(Error::Empty("entropy of no predictions".into()));
    }
    Ok(probs.row_iter().map(entropy).sum::<f64>() / probs.rows() as f64)
}

/// Whether larger scores indicate OOD inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    HigherIsOod,
    LowerIsOod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodDetection {
    pub auroc: f64,
    pub aupr: f64,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn oriented(scores: &[f64], direction: ScoreDirection) -> Result<Vec<f64>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("OOD scores contain NaN"));
    }
    Ok(match direction {
        ScoreDirection::HigherIsOod => scores.to_vec(),
        ScoreDirection::LowerIsOod => scores.iter().map(|s| -s).collect(),
    })
}

/// Mann–Whitney AUROC and interpolated-precision AUPR with OOD as the
/// positive class.
pub fn ood_detection(
    scores_iid: &[f64],
    scores_ood: &[f64],
    direction: ScoreDirection,
) -> Result<OodDetection> {
    if scores_iid.is_empty() || scores_ood.is_empty() {
        return Err(Error::Empty("OOD detection needs scores on both sides".into()));
    }
    let neg = oriented(scores_iid, direction)?;
    let pos = oriented(scores_ood, direction)?;
    let (n_neg, n_pos) = (neg.len() as f64, pos.len() as f64);

    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let ranks = average_ranks(&all);
    let rank_sum: f64 = ranks[..pos.len()].iter().sum();
    let auroc = (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);

    // precision/recall at each distinct threshold, highest score first
    let mut scored: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / n_pos, tp as f64 / (tp + fp) as f64));
    }
    let mut aupr = 0.0;
    let mut prev_recall = 0.0;
    for (j, &(r, _)) in points.iter().enumerate() {
        let p_interp = points[j..].iter().map(|p| p.1).fold(0.0, f64::max);
        aupr += (r - prev_recall) * p_interp;
        prev_recall = r;
    }
    Ok(OodDetection { auroc, aupr })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length series of length ≥ 2"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("spearman of a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub bins: usize,
    #[serde(default)]
    pub mece_bins: MeceBins,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bins: DEFAULT_BINS,
            mece_bins: MeceBins::All,
        }
    }
}

/// Detection results against the OOD set, one entry per score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodScores {
    /// Score = −max-probability.
    pub max_prob: OodDetection,
    /// Score = −scaled likelihood; absent for models without a density.
    pub likelihood: Option<OodDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: String,
    pub n: usize,
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    /// `null` when the set has no misclassified samples.
    pub mece: Option<f64>,
    pub brier: f64,
    pub mean_entropy: f64,
    pub mean_scaled_likelihood: Option<f64>,
    pub ood: Option<OodScores>,
    pub param_count: usize,
    pub latency_ms_per_sample: Option<f64>,
    pub bins: Vec<BinStats>,
}

impl EvalReport {
    pub fn compute(
        domain: &str,
        probs: &Matrix,
        labels: &[usize],
        likelihoods: Option<&[f64]>,
        param_count: usize,
        cfg: &MetricConfig,
    ) -> Result<Self> {
        let bins = reliability_bins(probs, labels, cfg.bins)?;
        let report = EvalReport {
            domain: domain.to_string(),
            n: labels.len(),
            accuracy: accuracy(probs, labels)?,
            nll: nll(probs, labels)?,
            ece: ece_from_bins(&bins),
            mece: mece(probs, labels, cfg.bins, cfg.mece_bins)?.value(),
            brier: brier(probs, labels)?,
            mean_entropy: mean_entropy(probs)?,
            mean_scaled_likelihood: likelihoods.map(|l| l.iter().sum::<f64>() / l.len() as f64),
            ood: None,
            param_count,
            latency_ms_per_sample: None,
            bins,
        };
        Ok(report)
    }

    /// Fills in detection scores with this report's set as in-distribution.
    pub fn with_ood(
        mut self,
        iid: (&Matrix, Option<&[f64]>),
        ood: (&Matrix, Option<&[f64]>),
    ) -> Result<Self> {
        let neg_max = |p: &Matrix| -> Vec<f64> {
            p.row_iter()
                .map(|r| -r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect()
        };
        let max_prob = ood_detection(&neg_max(iid.0), &neg_max(ood.0), ScoreDirection::HigherIsOod)?;
        let likelihood = match (iid.1, ood.1) {
            (Some(a), Some(b)) => Some(ood_detection(a, b, ScoreDirection::LowerIsOod)?),
            _ => None,
        };
        self.ood = Some(OodScores {
            max_prob,
            likelihood,
        });
        Ok(self)
    }
}

#[derive(Serialize)]
struct BinRow {
    bin: usize,
    count: usize,
    acc: f64,
    conf: f64,
}

/// Writes `bin,count,acc,conf` rows.
pub fn write_bins_csv<W: Write>(bins: &[BinStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(BinRow {
            bin: b.bin,
            count: b.count,
            acc: b.acc,
            conf: b.conf,
        })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
