//! Training losses on logits and their gradients.
//!
//! Every per-sample loss takes a (possibly soft) target distribution so that
//! mixup can feed interpolated one-hot targets to any base loss.

use super::mlp::MlpModel;
use crate::error::{FpError, Result};
use crate::evalcore::{logsumexp, softmax_into};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// ‖z‖ offset in LogitNorm, keeps the normalisation finite at z = 0.
pub const LOGITNORM_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Ce,
    Focal { gamma: f64 },
    LabelSmoothing { epsilon: f64 },
    L1Logit { lambda: f64 },
    LogitNorm { tau: f64 },
    CePlusOe { lambda: f64 },
    CePlusCrl { lambda: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FpError::InvalidParam(msg));
        match *self {
            Self::Ce => Ok(()),
            Self::Focal { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => bad(format!("focal gamma must be >= 0, got {gamma}")),
            Self::LabelSmoothing { epsilon } if !(0.0..1.0).contains(&epsilon) => {
                bad(format!("label smoothing epsilon must lie in [0, 1), got {epsilon}"))
            }
            Self::LogitNorm { tau } if !(tau > 0.0 && tau.is_finite()) => bad(format!("LogitNorm tau must be > 0, got {tau}")),
            Self::L1Logit { lambda } | Self::CePlusOe { lambda } | Self::CePlusCrl { lambda }
                if !(lambda >= 0.0 && lambda.is_finite()) =>
            {
                bad(format!("loss weight must be >= 0, got {lambda}"))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_outliers(&self) -> bool {
        matches!(self, Self::CePlusOe { .. })
    }

    pub fn needs_history(&self) -> bool {
        matches!(self, Self::CePlusCrl { .. })
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ce => write!(f, "ce"),
            Self::Focal { gamma } => write!(f, "focal:{gamma}"),
            Self::LabelSmoothing { epsilon } => write!(f, "label_smoothing:{epsilon}"),
            Self::L1Logit { lambda } => write!(f, "l1_logit:{lambda}"),
            Self::LogitNorm { tau } => write!(f, "logitnorm:{tau}"),
            Self::CePlusOe { lambda } => write!(f, "ce_plus_oe:{lambda}"),
            Self::CePlusCrl { lambda } => write!(f, "ce_plus_crl:{lambda}"),
        }
    }
}

/// Parses `name[:value]`, e.g. `focal:3`, `logitnorm:0.04`, `ce`. Missing
/// values take the conventional defaults.
impl FromStr for LossSpec {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, value) = match s.split_once(':') {
            Some((n, v)) => {
                let v: f64 = v.parse().map_err(|_| FpError::invalid_param(format!("bad loss parameter in `{s}`")))?;
                (n, Some(v))
            }
            None => (s, None),
        };
        let spec = match name {
            "ce" => Self::Ce,
            "focal" => Self::Focal { gamma: value.unwrap_or(3.0) },
            "label_smoothing" | "ls" => Self::LabelSmoothing { epsilon: value.unwrap_or(0.05) },
            "l1_logit" | "lp" => Self::L1Logit { lambda: value.unwrap_or(0.01) },
            "logitnorm" => Self::LogitNorm { tau: value.unwrap_or(0.04) },
            "ce_plus_oe" | "oe" => Self::CePlusOe { lambda: value.unwrap_or(0.5) },
            "ce_plus_crl" | "crl" => Self::CePlusCrl { lambda: value.unwrap_or(1.0) },
            other => return Err(FpError::invalid_param(format!("unknown loss `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Cross-entropy `−Σ t_k log softmax(z)_k`; writes dL/dz into `dz`.
fn soft_ce(z: &[f64], t: &[f64], dz: &mut [f64]) -> f64 {
    let lse = logsumexp(z);
    let mut loss = 0.0;
    let tsum: f64 = t.iter().sum();
    for ((d, &zk), &tk) in dz.iter_mut().zip(z).zip(t) {
        let p = (zk - lse).exp();
        loss -= tk * (zk - lse);
        *d = tsum * p - tk;
    }
    loss
}

/// `−Σ_k t_k (1 − p_k)^γ log p_k`.
fn focal(z: &[f64], t: &[f64], gamma: f64, dz: &mut [f64]) -> f64 {
    let lse = logsumexp(z);
    let k = z.len();
    let mut p = vec![0.0; k];
    softmax_into(z, &mut p);
    let mut loss = 0.0;
    // a_k = t_k · p_k · ∂L_k/∂p_k
    let mut a = vec![0.0; k];
    for j in 0..k {
        if t[j] == 0.0 {
            continue;
        }
        let logp = z[j] - lse;
        let q = 1.0 - p[j];
        let w = q.powf(gamma);
        loss += t[j] * (w * -logp);
        let mut ak = -w;
        if gamma != 0.0 {
            ak += gamma * p[j] * q.powf(gamma - 1.0) * logp;
        }
        a[j] = t[j] * ak;
    }
    let asum: f64 = a.iter().sum();
    for j in 0..k {
        dz[j] = a[j] - p[j] * asum;
    }
    loss
}

fn smooth_targets(t: &[f64], epsilon: f64) -> Vec<f64> {
    let off = epsilon / (t.len() - 1) as f64;
    t.iter().map(|&tk| tk * (1.0 - epsilon) + (1.0 - tk) * off).collect()
}

fn logitnorm(z: &[f64], t: &[f64], tau: f64, dz: &mut [f64]) -> f64 {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ne = norm + LOGITNORM_EPS;
    let scale = 1.0 / (tau * ne);
    let zn: Vec<f64> = z.iter().map(|v| v * scale).collect();
    let mut dzn = vec![0.0; z.len()];
    let loss = soft_ce(&zn, t, &mut dzn);
    // J = scale (I − z zᵀ / (‖z‖ ne)), symmetric
    let proj = if norm > 0.0 {
        z.iter().zip(&dzn).map(|(a, b)| a * b).sum::<f64>() / (norm * ne)
    } else {
        0.0
    };
    for ((d, &g), &zk) in dz.iter_mut().zip(&dzn).zip(z) {
        *d = scale * (g - zk * proj);
    }
    loss
}

/// Per-sample loss on one logit row (the base loss only; OE and CRL terms
/// are batch-level).
pub fn sample_loss(spec: &LossSpec, z: &[f64], t: &[f64], dz: &mut [f64]) -> f64 {
    match *spec {
        LossSpec::Ce | LossSpec::CePlusOe { .. } | LossSpec::CePlusCrl { .. } => soft_ce(z, t, dz),
        LossSpec::Focal { gamma } => focal(z, t, gamma, dz),
        LossSpec::LabelSmoothing { epsilon } => soft_ce(z, &smooth_targets(t, epsilon), dz),
        LossSpec::L1Logit { lambda } => {
            let ce = soft_ce(z, t, dz);
            let mut l1 = 0.0;
            for (d, &zk) in dz.iter_mut().zip(z) {
                l1 += zk.abs();
                if zk != 0.0 {
                    *d += lambda * zk.signum();
                }
            }
            ce + lambda * l1
        }
        LossSpec::LogitNorm { tau } => logitnorm(z, t, tau, dz),
    }
}

/// KL(U ‖ softmax(z)) = −log K − mean_k log p_k.
pub fn oe_sample_loss(z: &[f64], dz: &mut [f64]) -> f64 {
    let k = z.len() as f64;
    let lse = logsumexp(z);
    let mean_logp = z.iter().map(|zk| zk - lse).sum::<f64>() / k;
    for (d, &zk) in dz.iter_mut().zip(z) {
        *d = (zk - lse).exp() - 1.0 / k;
    }
    -k.ln() - mean_logp
}

/// Hinge ranking term for one pair: `max(0, −g(c_i, c_j)(κ_i − κ_j) + |c_i − c_j|)`
/// with `g` the sign of `c_i − c_j`.
pub fn crl_pair_loss(c_i: f64, c_j: f64, kappa_i: f64, kappa_j: f64) -> f64 {
    let g = sign(c_i - c_j);
    (-g * (kappa_i - kappa_j) + (c_i - c_j).abs()).max(0.0)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Top-1 minus top-2 softmax probability and its gradient w.r.t. the logits.
fn margin_with_grad(z: &[f64], grad: &mut [f64]) -> f64 {
    let k = z.len();
    let mut p = vec![0.0; k];
    softmax_into(z, &mut p);
    let (mut a, mut b) = (0, usize::MAX);
    for j in 1..k {
        if p[j] > p[a] {
            a = j;
        }
    }
    for j in 0..k {
        if j != a && (b == usize::MAX || p[j] > p[b]) {
            b = j;
        }
    }
    // ∂p_a/∂z = p_a (e_a − p), ∂p_b/∂z = p_b (e_b − p)
    for j in 0..k {
        let ea = f64::from(u8::from(j == a));
        let eb = f64::from(u8::from(j == b));
        grad[j] = p[a] * (ea - p[j]) - p[b] * (eb - p[j]);
    }
    p[a] - p[b]
}

/// Mean CRL hinge over the adjacent pairs `(i, i+1 mod m)` of a batch, with
/// margin confidence. Adds `weight ·` its gradient into `dlogits`.
pub fn crl_batch_loss(logits: &[f64], k: usize, rates: &[f64], weight: f64, dlogits: &mut [f64]) -> f64 {
    let m = rates.len();
    if m < 2 {
        return 0.0;
    }
    let mut kappa = vec![0.0; m];
    let mut dkappa = vec![0.0; m * k];
    for i in 0..m {
        kappa[i] = margin_with_grad(&logits[i * k..(i + 1) * k], &mut dkappa[i * k..(i + 1) * k]);
    }
    let mut total = 0.0;
    let scale = weight / m as f64;
    for i in 0..m {
        let j = (i + 1) % m;
        let term = crl_pair_loss(rates[i], rates[j], kappa[i], kappa[j]);
        if term > 0.0 {
            total += term;
            let g = sign(rates[i] - rates[j]);
            for c in 0..k {
                dlogits[i * k + c] -= scale * g * dkappa[i * k + c];
                dlogits[j * k + c] += scale * g * dkappa[j * k + c];
            }
        }
    }
    total / m as f64
}

/// One minibatch: inputs and soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    /// m×K target distributions (one-hot unless mixed).
    pub targets: Vec<f64>,
    pub size: usize,
}

impl Batch {
    pub fn one_hot(x: Vec<f64>, labels: &[usize], k: usize) -> Self {
        let mut targets = vec![0.0; labels.len() * k];
        for (i, &y) in labels.iter().enumerate() {
            targets[i * k + y] = 1.0;
        }
        Self { x, targets, size: labels.len() }
    }
}

/// Extra inputs some losses need.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossAux<'a> {
    /// Outlier inputs for OE, row-major with the model's input width.
    pub outliers: Option<&'a [f64]>,
    /// Historical correct rate of each batch row, for CRL.
    pub crl_rates: Option<&'a [f64]>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// In-distribution batch logits.
    pub logits: Vec<f64>,
}

/// Mean batch loss and its gradient with respect to every model parameter.
pub fn loss_and_grad(model: &MlpModel, batch: &Batch, spec: &LossSpec, aux: &LossAux<'_>) -> Result<LossOutput> {
    spec.validate()?;
    let k = model.num_classes();
    let m = batch.size;
    if m == 0 {
        return Err(FpError::invalid_input("empty batch"));
    }
    let cache = model.forward(&batch.x, m);
    let logits = cache.logits();
    let mut dlogits = vec![0.0; m * k];
    let mut loss = 0.0;
    for i in 0..m {
        let r = i * k..(i + 1) * k;
        loss += sample_loss(spec, &logits[r.clone()], &batch.targets[r.clone()], &mut dlogits[r]);
    }
    let inv_m = 1.0 / m as f64;
    loss *= inv_m;
    dlogits.iter_mut().for_each(|d| *d *= inv_m);

    if let LossSpec::CePlusCrl { lambda } = *spec {
        let rates = aux
            .crl_rates
            .ok_or_else(|| FpError::invalid_input("CRL loss needs historical correct rates"))?;
        if rates.len() != m {
            return Err(FpError::invalid_input("CRL rates are not aligned with the batch"));
        }
        loss += lambda * crl_batch_loss(logits, k, rates, lambda, &mut dlogits);
    }
    let mut grad = model.backward(&cache, &dlogits);

    if let LossSpec::CePlusOe { lambda } = *spec {
        let out = aux.outliers.ok_or_else(|| FpError::invalid_input("OE loss needs an outlier batch"))?;
        let mo = out.len() / model.input_dim();
        if mo > 0 {
            let oc = model.forward(out, mo);
            let mut dout = vec![0.0; mo * k];
            let mut oe = 0.0;
            for i in 0..mo {
                let r = i * k..(i + 1) * k;
                oe += oe_sample_loss(&oc.logits()[r.clone()], &mut dout[r]);
            }
            let s = lambda / mo as f64;
            dout.iter_mut().for_each(|d| *d *= s);
            loss += s * oe;
            model.backward_into(&oc, &dout, &mut grad);
        }
    }
    Ok(LossOutput { loss, grad, logits: logits.to_vec() })
}
