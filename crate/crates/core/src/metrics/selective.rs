//! Risk–coverage analysis for selective classification.

use crate::error::{FpError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Selective risk at each prefix coverage `i/n`, samples ranked by
/// decreasing confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcCurve {
    pub coverage: Vec<f64>,
    pub risk: Vec<f64>,
}

impl RcCurve {
    pub fn len(&self) -> usize {
        self.coverage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coverage.is_empty()
    }

    /// Two-column CSV `coverage,risk`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "coverage,risk")?;
        for (c, r) in self.coverage.iter().zip(&self.risk) {
            writeln!(out, "{c},{r}")?;
        }
        Ok(())
    }
}

pub(crate) fn check_aligned(scores: &[f64], mask: &[bool]) -> Result<()> {
    if scores.len() != mask.len() {
        return Err(FpError::invalid_input(format!(
            "{} scores but {} labels",
            scores.len(),
            mask.len()
        )));
    }
    if scores.is_empty() {
        return Err(FpError::invalid_input("no samples"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FpError::invalid_input("scores must be finite"));
    }
    Ok(())
}

/// Indices sorted by decreasing score; equal scores keep their original order.
pub(crate) fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

fn prefix_risks(scores: &[f64], correct: &[bool]) -> Vec<f64> {
    let mut errors = 0usize;
    descending_order(scores)
        .into_iter()
        .enumerate()
        .map(|(i, j)| {
            errors += usize::from(!correct[j]);
            errors as f64 / (i + 1) as f64
        })
        .collect()
}

pub fn rc_curve(scores: &[f64], correct: &[bool]) -> Result<RcCurve> {
    check_aligned(scores, correct)?;
    let n = scores.len() as f64;
    let risk = prefix_risks(scores, correct);
    let coverage = (1..=scores.len()).map(|i| i as f64 / n).collect();
    Ok(RcCurve { coverage, risk })
}

/// Area under the risk–coverage curve: the mean selective risk over the n
/// prefix coverages.
pub fn aurc(scores: &[f64], correct: &[bool]) -> Result<f64> {
    check_aligned(scores, correct)?;
    let risks = prefix_risks(scores, correct);
    Ok(risks.iter().sum::<f64>() / risks.len() as f64)
}

/// AURC of the ranking that puts every correct sample first.
pub fn optimal_aurc(correct: &[bool]) -> f64 {
    let n = correct.len();
    let n_correct = correct.iter().filter(|&&c| c).count();
    let sum: f64 = (1..=n)
        .map(|i| i.saturating_sub(n_correct) as f64 / i as f64)
        .sum();
    sum / n as f64
}

/// Excess AURC over the optimal ranking.
pub fn e_aurc(scores: &[f64], correct: &[bool]) -> Result<f64> {
    Ok(aurc(scores, correct)? - optimal_aurc(correct))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rc_curve_two_samples() {
        let c = rc_curve(&[0.9, 0.8], &[true, false]).unwrap();
        assert_eq!(c.coverage, vec![0.5, 1.0]);
        assert_eq!(c.risk, vec![0.0, 0.5]);
    }

    #[test]
    fn rc_curve_all_correct_or_wrong() {
        let s = [0.3, 0.1, 0.7, 0.2];
        assert!(rc_curve(&s, &[true; 4]).unwrap().risk.iter().all(|&r| r == 0.0));
        assert!(rc_curve(&s, &[false; 4]).unwrap().risk.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn rc_curve_length_mismatch() {
        assert!(matches!(rc_curve(&[0.1], &[true, false]), Err(FpError::InvalidInput(_))));
    }

    #[test]
    fn rc_curve_ties_keep_index_order() {
        let c = rc_curve(&[0.5, 0.5, 0.5], &[false, true, true]).unwrap();
        assert_eq!(c.risk, vec![1.0, 0.5, 1.0 / 3.0]);
    }

    #[test]
    fn aurc_examples() {
        assert_eq!(aurc(&[0.4, 0.9, 0.1], &[true; 3]).unwrap(), 0.0);
        let a = aurc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((a - (0.0 + 0.5 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((a - 0.277_78).abs() < 5e-6);
        let b = aurc(&[0.9, 0.8, 0.7], &[true, true, false]).unwrap();
        assert!((b - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn e_aurc_examples() {
        let a = e_aurc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((a - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(e_aurc(&[0.9, 0.8, 0.7], &[true, true, false]).unwrap(), 0.0);
        let s = [0.3, 0.9, 0.5, 0.1];
        let m = [false, true, true, false];
        let doubled: Vec<f64> = s.iter().map(|v| v * 2.0).collect();
        assert_eq!(e_aurc(&s, &m).unwrap(), e_aurc(&doubled, &m).unwrap());
    }

    #[test]
    fn optimal_aurc_matches_oracle_scores() {
        let correct = [true, false, false, true, true, false, true];
        let oracle: Vec<f64> = correct.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        assert!((optimal_aurc(&correct) - aurc(&oracle, &correct).unwrap()).abs() < 1e-15);
    }
}
