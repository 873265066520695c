//! Threshold-free ranking metrics: AUROC, FPR at a target TPR, AUPR.

use super::selective::{check_aligned, descending_order};
use crate::error::{FpError, Result};

fn class_counts(positives: &[bool]) -> Result<(usize, usize)> {
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return Err(FpError::DegenerateLabels(format!("{p} positives and {n} negatives")));
    }
    Ok((p, n))
}

/// Mann–Whitney estimate of P(score_pos > score_neg) + ½ P(equal), via
/// mid-ranks after one sort.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_aligned(scores, positives)?;
    let (p, n) = class_counts(positives)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // ranks start+1..=end share their mean
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let tied_pos = idx[start..end].iter().filter(|&&j| positives[j]).count();
        rank_sum += mid_rank * tied_pos as f64;
        start = end;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// False-positive rate at the largest threshold whose true-positive rate
/// exceeds `tpr_target` (or reaches 1). Samples scoring at the threshold are
/// accepted.
pub fn fpr_at_tpr(scores: &[f64], positives: &[bool], tpr_target: f64) -> Result<f64> {
    check_aligned(scores, positives)?;
    if !(0.0..=1.0).contains(&tpr_target) {
        return Err(FpError::invalid_param(format!("TPR target {tpr_target} is outside [0, 1]")));
    }
    let (p, n) = class_counts(positives)?;
    let order = descending_order(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / p as f64;
        if tpr > tpr_target || tp == p {
            return Ok(fp as f64 / n as f64);
        }
    }
    unreachable!("the lowest threshold accepts every positive")
}

/// Average precision: mean over positives (in decreasing-score order, ties
/// in index order) of the precision at that rank.
pub fn aupr(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_aligned(scores, positives)?;
    let p = positives.iter().filter(|&&b| b).count();
    if p == 0 {
        return Err(FpError::DegenerateLabels("no positives".into()));
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, j) in descending_order(scores).into_iter().enumerate() {
        if positives[j] {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / p as f64)
}

/// AUPR with correct predictions as positives.
pub fn aupr_success(scores: &[f64], correct: &[bool]) -> Result<f64> {
    aupr(scores, correct)
}

/// AUPR with errors as positives, ranked by negated confidence.
pub fn aupr_error(scores: &[f64], correct: &[bool]) -> Result<f64> {
    let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
    let errors: Vec<bool> = correct.iter().map(|c| !c).collect();
    aupr(&negated, &errors)
}
