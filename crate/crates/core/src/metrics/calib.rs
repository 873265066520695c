//! Calibration metrics: ECE, NLL and Brier score.

use super::selective::check_aligned;
use crate::error::{FpError, Result};
use crate::evalcore::{logsumexp, softmax_into, EvalSet};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ECE_BINS: usize = 15;

/// Equal-width confidence bins over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub bins: usize,
    pub count: Vec<usize>,
    /// Mean confidence per bin (0 for empty bins).
    pub confidence: Vec<f64>,
    /// Accuracy per bin (0 for empty bins).
    pub accuracy: Vec<f64>,
}

/// Bin `m` (0-based) covers `[m/M, (m+1)/M)`; the last bin also holds 1.0.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).floor() as usize).min(bins - 1)
}

pub fn bin_stats(confidence: &[f64], correct: &[bool], bins: usize) -> Result<BinStats> {
    check_aligned(confidence, correct)?;
    if bins == 0 {
        return Err(FpError::invalid_param("ECE needs at least one bin"));
    }
    if let Some(c) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(FpError::invalid_input(format!(
            "confidence {c} is outside [0, 1]; ECE is defined only for probability scores"
        )));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidence.iter().zip(correct) {
        let m = bin_index(c, bins);
        count[m] += 1;
        conf_sum[m] += c;
        hits[m] += usize::from(ok);
    }
    let mean = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    Ok(BinStats {
        bins,
        confidence: conf_sum.iter().zip(&count).map(|(&s, &n)| mean(s, n)).collect(),
        accuracy: hits.iter().zip(&count).map(|(&h, &n)| mean(h as f64, n)).collect(),
        count,
    })
}

/// Expected calibration error with `bins` equal-width bins.
pub fn ece(confidence: &[f64], correct: &[bool], bins: usize) -> Result<(f64, BinStats)> {
    let stats = bin_stats(confidence, correct, bins)?;
    let n = confidence.len() as f64;
    let value = (0..bins)
        .map(|m| stats.count[m] as f64 / n * (stats.accuracy[m] - stats.confidence[m]).abs())
        .sum();
    Ok((value, stats))
}

/// Mean negative log-likelihood of the labels under softmax(logits).
pub fn nll_from_logits(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &y)| logsumexp(row) - row[y])
        .sum();
    total / labels.len() as f64
}

/// Mean Σ_k (p_k − t_k)² with one-hot targets.
pub fn brier_from_logits(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let mut p = vec![0.0; k];
    let total: f64 = logits
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &y)| {
            softmax_into(row, &mut p);
            p.iter()
                .enumerate()
                .map(|(j, &q)| {
                    let t = if j == y { 1.0 } else { 0.0 };
                    (q - t) * (q - t)
                })
                .sum::<f64>()
        })
        .sum();
    total / labels.len() as f64
}

pub fn nll(eval: &EvalSet) -> f64 {
    nll_from_logits(eval.logits(), eval.num_classes(), eval.labels())
}

pub fn brier(eval: &EvalSet) -> f64 {
    brier_from_logits(eval.logits(), eval.num_classes(), eval.labels())
}
