//! Failure-prediction, calibration and OOD-detection metrics.

mod calib;
mod ranking;
mod selective;

pub use calib::{
    bin_index, bin_stats, brier, brier_from_logits, ece, nll, nll_from_logits, BinStats, DEFAULT_ECE_BINS,
};
pub use ranking::{aupr, aupr_error, aupr_success, auroc, fpr_at_tpr};
pub use selective::{aurc, e_aurc, optimal_aurc, rc_curve, RcCurve};

use crate::error::{FpError, Result};
use crate::evalcore::{compute_score, score_probability_logits, EvalSet, ScoreKind, ScoreParams, ScoreVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const FPR_TPR_TARGET: f64 = 0.95;

/// Every metric for one score on one evaluation set. A metric that could
/// not be computed is `None`, with the reason under the same key in `nulls`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub score_kind: ScoreKind,
    pub n: usize,
    pub aurc: Option<f64>,
    pub e_aurc: Option<f64>,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub aupr_s: Option<f64>,
    pub aupr_e: Option<f64>,
    pub ece: Option<f64>,
    pub nll: Option<f64>,
    pub brier: Option<f64>,
    pub accuracy: Option<f64>,
    pub nulls: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Number of metrics that were computed.
    pub fn populated(&self) -> usize {
        [
            self.aurc,
            self.e_aurc,
            self.auroc,
            self.fpr95,
            self.aupr_s,
            self.aupr_e,
            self.ece,
            self.nll,
            self.brier,
            self.accuracy,
        ]
        .iter()
        .filter(|m| m.is_some())
        .count()
    }

    /// AURC and E-AURC multiplied by 10³ for display.
    pub fn scaled_x1000(mut self) -> Self {
        self.aurc = self.aurc.map(|v| v * 1000.0);
        self.e_aurc = self.e_aurc.map(|v| v * 1000.0);
        self
    }
}

/// Options for [`full_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub params: ScoreParams,
    pub ece_bins: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { params: ScoreParams::default(), ece_bins: DEFAULT_ECE_BINS }
    }
}

fn record(slot: &mut Option<f64>, nulls: &mut BTreeMap<String, String>, name: &str, value: Result<f64>) {
    match value {
        Ok(v) => *slot = Some(v),
        Err(e) => {
            nulls.insert(name.to_owned(), format!("{}: {e}", e.kind()));
        }
    }
}

/// Computes `kind` on `eval` and every applicable metric. Failure of one
/// metric leaves it null without affecting the others.
pub fn full_report(eval: &EvalSet, kind: ScoreKind, opts: &ReportOptions) -> Result<MetricsReport> {
    let score = compute_score(eval, kind, &opts.params)?;
    let prob_logits = score_probability_logits(eval, kind, &opts.params)?;
    Ok(report_for_score(eval, &score, prob_logits.as_deref(), opts.ece_bins))
}

/// Report for an already computed score. `prob_logits` are the logits whose
/// softmax backs a probability-type score; calibration metrics stay null
/// without them.
pub fn report_for_score(eval: &EvalSet, score: &ScoreVector, prob_logits: Option<&[f64]>, ece_bins: usize) -> MetricsReport {
    let mask = eval.correctness();
    let correct = &mask.correct;
    let s = &score.values;
    let mut r = MetricsReport {
        score_kind: score.kind,
        n: eval.len(),
        aurc: None,
        e_aurc: None,
        auroc: None,
        fpr95: None,
        aupr_s: None,
        aupr_e: None,
        ece: None,
        nll: None,
        brier: None,
        accuracy: Some(mask.accuracy()),
        nulls: BTreeMap::new(),
    };
    let nulls = &mut r.nulls;
    record(&mut r.aurc, nulls, "aurc", aurc(s, correct));
    record(&mut r.e_aurc, nulls, "e_aurc", e_aurc(s, correct));
    record(&mut r.auroc, nulls, "auroc", auroc(s, correct));
    record(&mut r.fpr95, nulls, "fpr95", fpr_at_tpr(s, correct, FPR_TPR_TARGET));
    record(&mut r.aupr_s, nulls, "aupr_s", aupr_success(s, correct));
    record(&mut r.aupr_e, nulls, "aupr_e", aupr_error(s, correct));

    match prob_logits {
        Some(logits) => {
            let k = eval.num_classes();
            record(&mut r.ece, nulls, "ece", ece(s, correct, ece_bins).map(|(v, _)| v));
            r.nll = Some(nll_from_logits(logits, k, eval.labels()));
            r.brier = Some(brier_from_logits(logits, k, eval.labels()));
        }
        None => {
            let why = format!("not_probability: {} is not a probability score", score.kind);
            for name in ["ece", "nll", "brier"] {
                nulls.insert(name.to_owned(), why.clone());
            }
        }
    }
    r
}

/// In-distribution vs OOD separation for one score (in-distribution samples
/// are the positives).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub score_kind: ScoreKind,
    pub n_in: usize,
    pub n_out: usize,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub aupr_in: Option<f64>,
    pub aupr_out: Option<f64>,
    pub nulls: BTreeMap<String, String>,
}

pub fn ood_report(kind: ScoreKind, score_in: &[f64], score_out: &[f64]) -> Result<OodReport> {
    if score_in.is_empty() || score_out.is_empty() {
        return Err(FpError::DegenerateLabels("need both in-distribution and OOD samples".into()));
    }
    let scores: Vec<f64> = score_in.iter().chain(score_out).copied().collect();
    let is_in: Vec<bool> = (0..scores.len()).map(|i| i < score_in.len()).collect();
    let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
    let is_out: Vec<bool> = is_in.iter().map(|b| !b).collect();
    let mut r = OodReport {
        score_kind: kind,
        n_in: score_in.len(),
        n_out: score_out.len(),
        auroc: None,
        fpr95: None,
        aupr_in: None,
        aupr_out: None,
        nulls: BTreeMap::new(),
    };
    let nulls = &mut r.nulls;
    record(&mut r.auroc, nulls, "auroc", auroc(&scores, &is_in));
    record(&mut r.fpr95, nulls, "fpr95", fpr_at_tpr(&scores, &is_in, FPR_TPR_TARGET));
    record(&mut r.aupr_in, nulls, "aupr_in", aupr(&scores, &is_in));
    record(&mut r.aupr_out, nulls, "aupr_out", aupr(&negated, &is_out));
    Ok(r)
}

/// Convenience: scores of `kind` on an in-distribution and an OOD set.
pub fn ood_report_for(eval_in: &EvalSet, eval_out: &EvalSet, kind: ScoreKind, params: &ScoreParams) -> Result<OodReport> {
    let a = compute_score(eval_in, kind, params)?;
    let b = compute_score(eval_out, kind, params)?;
    ood_report(kind, &a.values, &b.values)
}
