use crate::error::{FpError, Result};
use crate::evalcore::{argmax, logsumexp, softmax, ClassifierHead};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const PI_IN_MIN: f64 = 0.01;
pub const PI_IN_MAX: f64 = 0.99;
const PRIOR_SUM_TOL: f64 = 1e-9;

/// One in-distribution class: isotropic Gaussian `N(mean, var·I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComponent {
    pub mean: Vec<f64>,
    pub var: f64,
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodDensity {
    Gaussian { mean: Vec<f64>, var: f64 },
    UniformBox { low: Vec<f64>, high: Vec<f64> },
}

/// Gaussian-mixture world: K in-distribution classes, one OOD density, the
/// in-distribution share `pi_in` and the rejection cost `reject_cost`.
/// `model` is an optional linear classifier (logits `W x + b`) whose MSP
/// can serve as a rejection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub classes: Vec<ClassComponent>,
    pub ood: OodDensity,
    pub pi_in: f64,
    pub reject_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ClassifierHead>,
}

pub(crate) fn gaussian_log_pdf(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * d * (2.0 * PI * var).ln() - sq / (2.0 * var)
}

impl MixtureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| FpError::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mixture spec serializes")
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FpError::InvalidParam(m));
        if self.classes.len() < 2 {
            return bad("a mixture needs at least two classes".into());
        }
        let d = self.dim();
        if !(1..=2).contains(&d) {
            return bad(format!("dimension must be 1 or 2, got {d}"));
        }
        let mut prior_sum = 0.0;
        for (k, c) in self.classes.iter().enumerate() {
            if c.mean.len() != d || c.mean.iter().any(|v| !v.is_finite()) {
                return bad(format!("class {k}: mean must hold {d} finite values"));
            }
            if !(c.var > 0.0 && c.var.is_finite()) {
                return bad(format!("class {k}: variance must be > 0"));
            }
            if !(c.prior > 0.0 && c.prior <= 1.0) {
                return bad(format!("class {k}: prior must lie in (0, 1]"));
            }
            prior_sum += c.prior;
        }
        if (prior_sum - 1.0).abs() > PRIOR_SUM_TOL {
            return bad(format!("class priors sum to {prior_sum}, not 1"));
        }
        match &self.ood {
            OodDensity::Gaussian { mean, var } => {
                if mean.len() != d || !(*var > 0.0 && var.is_finite()) {
                    return bad("OOD Gaussian needs a mean of the mixture dimension and a positive variance".into());
                }
            }
            OodDensity::UniformBox { low, high } => {
                if low.len() != d || high.len() != d || low.iter().zip(high).any(|(l, h)| l >= h || !(h - l).is_finite()) {
                    return bad("OOD box needs finite bounds with low < high in every coordinate".into());
                }
            }
        }
        if !(self.pi_in > PI_IN_MIN && self.pi_in < PI_IN_MAX) {
            return bad(format!("pi_in must lie in ({PI_IN_MIN}, {PI_IN_MAX}), got {}", self.pi_in));
        }
        if !(self.reject_cost > 0.0 && self.reject_cost < 1.0) {
            return bad(format!("reject cost must lie in (0, 1), got {}", self.reject_cost));
        }
        if let Some(m) = &self.model {
            if m.weights.len() != self.num_classes()
                || m.bias.len() != self.num_classes()
                || m.weights.iter().any(|r| r.len() != d)
            {
                return bad(format!("model must be {}x{d} weights plus {} biases", self.num_classes(), self.num_classes()));
            }
        }
        Ok(())
    }

    /// `log p(y=k) + log p(x|y=k)` for every class.
    pub fn class_joint_log(&self, x: &[f64]) -> Vec<f64> {
        self.classes
            .iter()
            .map(|c| c.prior.ln() + gaussian_log_pdf(x, &c.mean, c.var))
            .collect()
    }

    pub fn in_log_density(&self, x: &[f64]) -> f64 {
        logsumexp(&self.class_joint_log(x))
    }

    /// `−∞` outside the support of a uniform box.
    pub fn out_log_density(&self, x: &[f64]) -> f64 {
        match &self.ood {
            OodDensity::Gaussian { mean, var } => gaussian_log_pdf(x, mean, *var),
            OodDensity::UniformBox { low, high } => {
                let inside = x.iter().zip(low.iter().zip(high)).all(|(v, (l, h))| *l <= *v && *v <= *h);
                if inside {
                    -low.iter().zip(high).map(|(l, h)| (h - l).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// `log p(x|in) − log p(x|out)`; `+∞` where the OOD density vanishes.
    pub fn log_density_ratio(&self, x: &[f64]) -> f64 {
        let lo = self.out_log_density(x);
        if lo == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        self.in_log_density(x) - lo
    }

    /// Density-ratio threshold `(1 − π_in) / π_in` of the Bayes OOD rule.
    pub fn ood_threshold(&self) -> f64 {
        (1.0 - self.pi_in) / self.pi_in
    }

    /// Chow threshold `1 − c` on the true posterior maximum.
    pub fn chow_threshold(&self) -> f64 {
        1.0 - self.reject_cost
    }

    /// Bayes class of `x` (lowest index on ties).
    pub fn bayes_class(&self, x: &[f64]) -> usize {
        argmax(&self.class_joint_log(x))
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(FpError::invalid_input(format!("point must hold {} finite coordinates", self.dim())));
        }
        Ok(())
    }
}

/// `P(y | x)` over the in-distribution classes.
pub fn true_posterior(spec: &MixtureSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_point(x)?;
    softmax(&spec.class_joint_log(x))
}

/// MSP of the optional linear model at `x`.
pub fn model_msp(spec: &MixtureSpec, x: &[f64]) -> Result<f64> {
    let head = spec
        .model
        .as_ref()
        .ok_or_else(|| FpError::MissingModelAccess("the mixture spec carries no model".into()))?;
    let mut z = vec![0.0; head.bias.len()];
    head.apply(x, &mut z);
    Ok(softmax(&z)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}
