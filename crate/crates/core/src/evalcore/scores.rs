use super::{argmax, logsumexp, softmax_into, EvalSet};
use crate::error::{FpError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Named post-hoc confidence score. Every kind is oriented so that a higher
/// value means "more confident / keep".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Msp,
    NegEntropy,
    Margin,
    MaxLogit,
    Energy,
    OdinT,
    ReactMsp,
    /// Reserved; computing it is an error.
    DoctorNone,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 7] = [
        ScoreKind::Msp,
        ScoreKind::NegEntropy,
        ScoreKind::Margin,
        ScoreKind::MaxLogit,
        ScoreKind::Energy,
        ScoreKind::OdinT,
        ScoreKind::ReactMsp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Msp => "msp",
            Self::NegEntropy => "neg_entropy",
            Self::Margin => "margin",
            Self::MaxLogit => "max_logit",
            Self::Energy => "energy",
            Self::OdinT => "odin_t",
            Self::ReactMsp => "react_msp",
            Self::DoctorNone => "doctor_none",
        }
    }

    /// Scores that are themselves a probability of the predicted class.
    pub fn is_probability(self) -> bool {
        matches!(self, Self::Msp | Self::OdinT | Self::ReactMsp)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim() {
            "msp" => Self::Msp,
            "neg_entropy" | "entropy" => Self::NegEntropy,
            "margin" => Self::Margin,
            "max_logit" | "mlogit" => Self::MaxLogit,
            "energy" => Self::Energy,
            "odin_t" | "odin" => Self::OdinT,
            "react_msp" | "react" => Self::ReactMsp,
            "doctor_none" => Self::DoctorNone,
            other => return Err(FpError::invalid_param(format!("unknown score kind `{other}`"))),
        };
        Ok(kind)
    }
}

/// Hyperparameters shared by the score functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Energy temperature.
    pub energy_temperature: f64,
    /// ODIN temperature.
    pub odin_temperature: f64,
    /// ReAct truncation percentile over the pooled activations of the
    /// evaluation split, in (0, 100].
    pub react_percentile: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { energy_temperature: 1.0, odin_temperature: 1000.0, react_percentile: 90.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub kind: ScoreKind,
    pub values: Vec<f64>,
    pub params: BTreeMap<String, f64>,
}

impl ScoreVector {
    pub fn new(kind: ScoreKind, values: Vec<f64>) -> Self {
        Self { kind, values, params: BTreeMap::new() }
    }

    fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_owned(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn map_rows(eval: &EvalSet, mut f: impl FnMut(&[f64], &mut [f64]) -> f64) -> Vec<f64> {
    let mut buf = vec![0.0; eval.num_classes()];
    eval.rows().map(|row| f(row, &mut buf)).collect()
}

fn top_two(p: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    (first, second)
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(FpError::invalid_param(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

pub fn score_msp(eval: &EvalSet) -> ScoreVector {
    let values = map_rows(eval, |row, p| {
        softmax_into(row, p);
        p[argmax(p)]
    });
    ScoreVector::new(ScoreKind::Msp, values)
}

/// Σ p log p, with 0·log 0 = 0.
pub fn score_neg_entropy(eval: &EvalSet) -> ScoreVector {
    let values = map_rows(eval, |row, p| {
        softmax_into(row, p);
        p.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum()
    });
    ScoreVector::new(ScoreKind::NegEntropy, values)
}

pub fn score_margin(eval: &EvalSet) -> ScoreVector {
    let values = map_rows(eval, |row, p| {
        softmax_into(row, p);
        let (a, b) = top_two(p);
        a - b
    });
    ScoreVector::new(ScoreKind::Margin, values)
}

pub fn score_max_logit(eval: &EvalSet) -> ScoreVector {
    let values = eval.rows().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    ScoreVector::new(ScoreKind::MaxLogit, values)
}

/// Negated energy, `T · log Σ exp(z / T)`.
pub fn score_energy(eval: &EvalSet, temperature: f64) -> Result<ScoreVector> {
    check_temperature(temperature)?;
    let values = map_rows(eval, |row, buf| {
        for (b, z) in buf.iter_mut().zip(row) {
            *b = z / temperature;
        }
        temperature * logsumexp(buf)
    });
    Ok(ScoreVector::new(ScoreKind::Energy, values).with_param("temperature", temperature))
}

/// MSP of temperature-scaled logits (ODIN without input perturbation).
pub fn score_odin_t(eval: &EvalSet, temperature: f64) -> Result<ScoreVector> {
    check_temperature(temperature)?;
    let mut scaled = vec![0.0; eval.num_classes()];
    let values = map_rows(eval, |row, p| {
        for (s, z) in scaled.iter_mut().zip(row) {
            *s = z / temperature;
        }
        softmax_into(&scaled, p);
        p[argmax(p)]
    });
    Ok(ScoreVector::new(ScoreKind::OdinT, values).with_param("temperature", temperature))
}

/// Percentile of the pooled feature activations, linear interpolation
/// between order statistics.
pub fn react_threshold(activations: &[f64], percentile: f64) -> Result<f64> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(FpError::invalid_param(format!(
            "ReAct percentile must lie in (0, 100], got {percentile}"
        )));
    }
    if activations.is_empty() {
        return Err(FpError::invalid_input("no activations to take a percentile of"));
    }
    let mut sorted = activations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = percentile / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

fn rectified_logits(eval: &EvalSet, threshold: f64) -> Result<Vec<f64>> {
    let (features, head) = match (eval.features(), eval.head()) {
        (Some(f), Some(h)) => (f, h),
        _ => {
            return Err(FpError::MissingModelAccess(
                "ReAct needs penultimate features and the classifier head".into(),
            ))
        }
    };
    let k = eval.num_classes();
    let mut logits = vec![0.0; eval.len() * k];
    let mut clipped = vec![0.0; features.dim];
    for (i, out) in logits.chunks_exact_mut(k).enumerate() {
        for (c, &f) in clipped.iter_mut().zip(features.row(i)) {
            *c = f.min(threshold);
        }
        head.apply(&clipped, out);
    }
    Ok(logits)
}

/// ReAct with an explicit clamp threshold.
pub fn score_react_with_threshold(eval: &EvalSet, threshold: f64) -> Result<ScoreVector> {
    let logits = rectified_logits(eval, threshold)?;
    let k = eval.num_classes();
    let mut p = vec![0.0; k];
    let values = logits
        .chunks_exact(k)
        .map(|row| {
            softmax_into(row, &mut p);
            p[argmax(&p)]
        })
        .collect();
    Ok(ScoreVector::new(ScoreKind::ReactMsp, values).with_param("threshold", threshold))
}

/// ReAct: clamp activations at the given percentile, recompute logits, MSP.
pub fn score_react(eval: &EvalSet, percentile: f64) -> Result<ScoreVector> {
    let features = eval.features().ok_or_else(|| {
        FpError::MissingModelAccess("ReAct needs penultimate features and the classifier head".into())
    })?;
    let threshold = react_threshold(&features.values, percentile)?;
    Ok(score_react_with_threshold(eval, threshold)?.with_param("percentile", percentile))
}

pub fn compute_score(eval: &EvalSet, kind: ScoreKind, params: &ScoreParams) -> Result<ScoreVector> {
    match kind {
        ScoreKind::Msp => Ok(score_msp(eval)),
        ScoreKind::NegEntropy => Ok(score_neg_entropy(eval)),
        ScoreKind::Margin => Ok(score_margin(eval)),
        ScoreKind::MaxLogit => Ok(score_max_logit(eval)),
        ScoreKind::Energy => score_energy(eval, params.energy_temperature),
        ScoreKind::OdinT => score_odin_t(eval, params.odin_temperature),
        ScoreKind::ReactMsp => score_react(eval, params.react_percentile),
        ScoreKind::DoctorNone => Err(FpError::invalid_param("doctor_none is reserved and has no definition")),
    }
}

/// Logits whose softmax is the distribution behind a probability-type score
/// (`msp`: raw logits, `odin_t`: logits / T, `react_msp`: rectified logits);
/// `None` for scores that are not probabilities. N×K row-major.
pub fn score_probability_logits(eval: &EvalSet, kind: ScoreKind, params: &ScoreParams) -> Result<Option<Vec<f64>>> {
    let logits = match kind {
        ScoreKind::Msp => eval.logits().to_vec(),
        ScoreKind::OdinT => {
            check_temperature(params.odin_temperature)?;
            eval.logits().iter().map(|z| z / params.odin_temperature).collect()
        }
        ScoreKind::ReactMsp => {
            let features = eval.features().ok_or_else(|| {
                FpError::MissingModelAccess("ReAct needs penultimate features and the classifier head".into())
            })?;
            let threshold = react_threshold(&features.values, params.react_percentile)?;
            rectified_logits(eval, threshold)?
        }
        _ => return Ok(None),
    };
    Ok(Some(logits))
}
