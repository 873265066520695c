//! Estimator for the decomposition of a strictly proper scoring rule,
//!
//! `E[d(S, Y)] = E[d(S, C)] + E[d(C, Q)] + E[d(Q, Y)]`
//!
//! (calibration + grouping + aleatoric), where `C` is the recalibrated score.
//! `C` is estimated at confidence level: samples are binned by their top
//! probability and, within a bin, `C` assigns to the r-th ranked class of a
//! sample the empirical frequency with which the label is the r-th ranked
//! class. For two classes this is exactly "replace the confidence with the
//! bin accuracy".

use crate::error::{FpError, Result};
use crate::evalcore::{logsumexp, EvalSet};
use crate::metrics::bin_index;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringRule {
    LogLoss,
    Brier,
    /// Accepted by the parser so it can be rejected: focal loss is not
    /// strictly proper.
    Focal,
}

impl FromStr for ScoringRule {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_loss" | "log" | "nll" => Ok(Self::LogLoss),
            "brier" => Ok(Self::Brier),
            "focal" => Ok(Self::Focal),
            other => Err(FpError::invalid_param(format!("unknown scoring rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEstimate {
    pub rule: ScoringRule,
    pub bins: usize,
    /// Bins that received no sample.
    pub empty_bins: usize,
    pub total: f64,
    pub calibration_term: f64,
    pub grouping_plus_aleatoric: f64,
    pub grouping: Option<f64>,
    pub aleatoric: Option<f64>,
}

/// d(S, Q) for the log loss, KL(Q ‖ S), with S given through its log.
fn kl_from_log(q: &[f64], log_s: &[f64]) -> f64 {
    q.iter()
        .zip(log_s)
        .filter(|(&qk, _)| qk > 0.0)
        .map(|(&qk, &ls)| qk * (qk.ln() - ls))
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Class indices of `p` in decreasing order; ties by index.
fn rank_classes(p: &[f64], out: &mut [usize]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = i;
    }
    out.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
}

/// Decomposes the mean divergence of `softmax(eval.logits)` from the labels.
/// `true_posterior` (N×K row-major) splits the remainder into grouping and
/// aleatoric terms.
pub fn decompose_score(
    eval: &EvalSet,
    rule: ScoringRule,
    bins: usize,
    true_posterior: Option<&[f64]>,
) -> Result<DecompositionEstimate> {
    if rule == ScoringRule::Focal {
        return Err(FpError::invalid_param(
            "focal loss is not a strictly proper scoring rule; use log_loss or brier",
        ));
    }
    if bins == 0 {
        return Err(FpError::invalid_param("need at least one bin"));
    }
    let n = eval.len();
    let k = eval.num_classes();
    if let Some(q) = true_posterior {
        if q.len() != n * k {
            return Err(FpError::invalid_input(format!("true posterior has {} entries, expected {}", q.len(), n * k)));
        }
        if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FpError::invalid_input("true posterior must be finite and nonnegative"));
        }
    }

    // log S and S per row
    let mut log_s = vec![0.0; n * k];
    for (row, dst) in eval.rows().zip(log_s.chunks_exact_mut(k)) {
        let lse = logsumexp(row);
        for (d, z) in dst.iter_mut().zip(row) {
            *d = z - lse;
        }
    }
    let s: Vec<f64> = log_s.iter().map(|v| v.exp()).collect();

    // rank-frame label frequencies per confidence bin
    let mut ranks = vec![0usize; n * k];
    let mut bin_of = vec![0usize; n];
    let mut counts = vec![0usize; bins];
    let mut freq = vec![0.0; bins * k];
    for i in 0..n {
        let p = &s[i * k..(i + 1) * k];
        let r = &mut ranks[i * k..(i + 1) * k];
        rank_classes(p, r);
        let m = bin_index(p[r[0]], bins);
        bin_of[i] = m;
        counts[m] += 1;
        let y = eval.labels()[i];
        let pos = r.iter().position(|&c| c == y).expect("label is a class");
        freq[m * k + pos] += 1.0;
    }
    for m in 0..bins {
        if counts[m] > 0 {
            for v in &mut freq[m * k..(m + 1) * k] {
                *v /= counts[m] as f64;
            }
        }
    }

    let mut c_row = vec![0.0; k];
    let mut onehot = vec![0.0; k];
    let (mut total, mut calib, mut aleatoric) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let m = bin_of[i];
        for (pos, &class) in ranks[i * k..(i + 1) * k].iter().enumerate() {
            c_row[class] = freq[m * k + pos];
        }
        let y = eval.labels()[i];
        onehot.iter_mut().enumerate().for_each(|(j, v)| *v = if j == y { 1.0 } else { 0.0 });
        let ls = &log_s[i * k..(i + 1) * k];
        let si = &s[i * k..(i + 1) * k];
        match rule {
            ScoringRule::LogLoss => {
                total += -ls[y];
                calib += kl_from_log(&c_row, ls);
                if let Some(q) = true_posterior {
                    aleatoric += -q[i * k + y].ln();
                }
            }
            ScoringRule::Brier => {
                total += sq_dist(si, &onehot);
                calib += sq_dist(si, &c_row);
                if let Some(q) = true_posterior {
                    aleatoric += sq_dist(&q[i * k..(i + 1) * k], &onehot);
                }
            }
            ScoringRule::Focal => unreachable!(),
        }
    }
    let nf = n as f64;
    let total = total / nf;
    let calibration_term = calib / nf;
    let grouping_plus_aleatoric = total - calibration_term;
    let (grouping, aleatoric) = match true_posterior {
        Some(_) => {
            let a = aleatoric / nf;
            (Some(grouping_plus_aleatoric - a), Some(a))
        }
        None => (None, None),
    };
    Ok(DecompositionEstimate {
        rule,
        bins,
        empty_bins: counts.iter().filter(|&&c| c == 0).count(),
        total,
        calibration_term,
        grouping_plus_aleatoric,
        grouping,
        aleatoric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn deterministic_correct_scores_have_zero_terms() {
        let e = EvalSet::from_rows(&[vec![1000.0, 0.0], vec![0.0, 1000.0], vec![1000.0, 0.0]], vec![0, 1, 0]).unwrap();
        let q = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        for rule in [ScoringRule::LogLoss, ScoringRule::Brier] {
            let d = decompose_score(&e, rule, 10, Some(&q)).unwrap();
            assert_eq!(d.total, 0.0);
            assert_eq!(d.calibration_term, 0.0);
            assert_eq!(d.grouping, Some(0.0));
            assert_eq!(d.aleatoric, Some(0.0));
        }
    }

    #[test]
    fn focal_is_rejected() {
        let e = EvalSet::from_rows(&[vec![1.0, 0.0]], vec![0]).unwrap();
        assert!(matches!(decompose_score(&e, ScoringRule::Focal, 10, None), Err(FpError::InvalidParam(_))));
    }

    #[test]
    fn additivity_is_exact() {
        let mut rng = rng_from(4);
        let n = 500;
        let mut logits = Vec::new();
        let mut q = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-3.0..3.0);
            let p = 1.0 / (1.0 + (-a).exp());
            q.extend([p, 1.0 - p]);
            labels.push(usize::from(rng.random::<f64>() >= p));
            logits.extend([1.7 * a, 0.0]);
        }
        let e = EvalSet::new(logits, 2, labels).unwrap();
        for rule in [ScoringRule::LogLoss, ScoringRule::Brier] {
            let d = decompose_score(&e, rule, 15, Some(&q)).unwrap();
            assert_eq!(d.total, d.calibration_term + d.grouping_plus_aleatoric);
            let sum = d.grouping.unwrap() + d.aleatoric.unwrap();
            assert!((sum - d.grouping_plus_aleatoric).abs() < 1e-12);
            assert!(d.calibration_term >= 0.0);
        }
    }

    #[test]
    fn two_class_recalibration_is_bin_accuracy() {
        // all in one bin: confidences 0.73, accuracy 1/2
        let z = (0.73f64 / 0.27).ln();
        let e = EvalSet::from_rows(&[vec![z, 0.0], vec![0.0, z]], vec![0, 0]).unwrap();
        let d = decompose_score(&e, ScoringRule::Brier, 1, None).unwrap();
        // C = (0.5, 0.5) in rank frame; (0.73-0.5)^2 * 2
        assert!((d.calibration_term - 2.0 * 0.23f64.powi(2)).abs() < 1e-12);
        assert_eq!(d.empty_bins, 0);
    }
}
