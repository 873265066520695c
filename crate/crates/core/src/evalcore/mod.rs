//! Classifier outputs and post-hoc confidence scores.

mod io;
mod scores;

pub use io::{
    fmt_num, read_eval_csv, read_features_csv, read_head_json, read_posterior_csv, write_eval_csv, write_matrix_csv,
};
pub use scores::{
    compute_score, react_threshold, score_energy, score_margin, score_max_logit, score_msp,
    score_neg_entropy, score_odin_t, score_probability_logits, score_react, score_react_with_threshold,
    ScoreKind, ScoreParams, ScoreVector,
};

use crate::error::{FpError, Result};
use serde::{Deserialize, Serialize};

/// Tolerance for `head(features) == logits` when both are supplied.
pub const HEAD_CONSISTENCY_TOL: f64 = 1e-6;

/// Last linear layer of a classifier: `logits = weights · features + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// K rows of D weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.bias.len() {
            return Err(FpError::invalid_input(format!(
                "classifier head has {} weight rows but {} biases",
                self.weights.len(),
                self.bias.len()
            )));
        }
        let d = self.feature_dim();
        if d == 0 || self.weights.iter().any(|row| row.len() != d) {
            return Err(FpError::invalid_input("classifier head rows must share a nonzero width"));
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(FpError::invalid_input("classifier head contains non-finite values"));
        }
        Ok(())
    }

    /// Applies the head to one feature row, writing K logits into `out`.
    pub fn apply(&self, features: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(&self.weights).zip(&self.bias) {
            *o = row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + b;
        }
    }
}

/// Penultimate activations, row-aligned with the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub values: Vec<f64>,
    pub dim: usize,
}

impl Features {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// N×K logits with integer labels; the evaluation input for every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    logits: Vec<f64>,
    labels: Vec<usize>,
    k: usize,
    features: Option<Features>,
    head: Option<ClassifierHead>,
}

impl EvalSet {
    /// Builds an evaluation set from row-major logits.
    pub fn new(logits: Vec<f64>, k: usize, labels: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(FpError::invalid_input(format!("need at least 2 classes, got {k}")));
        }
        let n = labels.len();
        if n == 0 {
            return Err(FpError::invalid_input("evaluation set is empty"));
        }
        if logits.len() != n * k {
            return Err(FpError::invalid_input(format!(
                "logits length {} is not {n}×{k}",
                logits.len()
            )));
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(FpError::invalid_input(format!(
                "non-finite logit at row {}, column {}",
                pos / k,
                pos % k
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
            return Err(FpError::invalid_input(format!("label {y} at row {i} is outside [0, {k})")));
        }
        Ok(Self { logits, labels, k, features: None, head: None })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(FpError::invalid_input("logit rows have differing widths"));
        }
        Self::new(rows.concat(), k, labels)
    }

    /// Attaches penultimate features and the classifier head. When both are
    /// present the head must reproduce the stored logits.
    pub fn with_model_access(mut self, features: Features, head: ClassifierHead) -> Result<Self> {
        head.validate()?;
        if features.dim != head.feature_dim() {
            return Err(FpError::invalid_input(format!(
                "features have width {} but head expects {}",
                features.dim,
                head.feature_dim()
            )));
        }
        if head.num_classes() != self.k {
            return Err(FpError::invalid_input(format!(
                "head produces {} classes but logits have {}",
                head.num_classes(),
                self.k
            )));
        }
        if features.values.len() != features.dim * self.len() {
            return Err(FpError::invalid_input("features are not row-aligned with logits"));
        }
        if features.values.iter().any(|v| !v.is_finite()) {
            return Err(FpError::invalid_input("non-finite feature value"));
        }
        let mut buf = vec![0.0; self.k];
        for i in 0..self.len() {
            head.apply(features.row(i), &mut buf);
            let dev = buf
                .iter()
                .zip(self.row(i))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dev > HEAD_CONSISTENCY_TOL {
                return Err(FpError::invalid_input(format!(
                    "head(features) differs from stored logits by {dev:e} at row {i}"
                )));
            }
        }
        self.features = Some(features);
        self.head = Some(head);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.logits.chunks_exact(self.k)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> Option<&Features> {
        self.features.as_ref()
    }

    pub fn head(&self) -> Option<&ClassifierHead> {
        self.head.as_ref()
    }

    /// Same labels, new logits (model access is dropped since the head no
    /// longer reproduces them).
    pub(crate) fn with_logits(&self, logits: Vec<f64>) -> Result<Self> {
        Self::new(logits, self.k, self.labels.clone())
    }

    /// Row-wise softmax probabilities, N×K row-major.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.logits.len()];
        for (row, dst) in self.rows().zip(out.chunks_exact_mut(self.k)) {
            softmax_into(row, dst);
        }
        out
    }

    pub fn correctness(&self) -> CorrectnessMask {
        let predicted: Vec<usize> = self.rows().map(argmax).collect();
        let correct = predicted.iter().zip(&self.labels).map(|(p, y)| p == y).collect();
        CorrectnessMask { predicted, correct }
    }
}

/// Predicted class per row and whether it matches the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessMask {
    pub predicted: Vec<usize>,
    pub correct: Vec<bool>,
}

impl CorrectnessMask {
    pub fn from_correct(correct: Vec<bool>) -> Self {
        Self { predicted: vec![0; correct.len()], correct }
    }

    pub fn len(&self) -> usize {
        self.correct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correct.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        if self.correct.is_empty() {
            return 0.0;
        }
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len() as f64
    }

    pub fn errors(&self) -> Vec<bool> {
        self.correct.iter().map(|c| !c).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of one logit row.
pub fn softmax(row: &[f64]) -> Result<Vec<f64>> {
    if row.is_empty() {
        return Err(FpError::invalid_input("softmax of an empty row"));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(FpError::invalid_input("softmax input contains non-finite values"));
    }
    let mut out = vec![0.0; row.len()];
    softmax_into(row, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `log Σ exp(row)` with max subtraction.
pub fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}
