use crate::error::{FpError, Result};
use crate::evalcore::{logsumexp, EvalSet};
use serde::{Deserialize, Serialize};

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 100.0;
/// Search stops once the bracket is narrower than this in T.
pub const T_TOL: f64 = 1e-4;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub iterations: usize,
    pub warning: Option<String>,
    /// Best (T, NLL) after each iteration of the search.
    #[serde(skip)]
    pub path: Vec<(f64, f64)>,
}

fn scaled_nll(eval: &EvalSet, temperature: f64, buf: &mut [f64]) -> f64 {
    let total: f64 = eval
        .rows()
        .zip(eval.labels())
        .map(|(row, &y)| {
            for (b, z) in buf.iter_mut().zip(row) {
                *b = z / temperature;
            }
            logsumexp(buf) - buf[y]
        })
        .sum();
    total / eval.len() as f64
}

/// Fits the temperature minimising mean NLL of softmax(logits / T) on a
/// holdout set.
///
/// NLL is convex in 1/T, so it is unimodal in ln T; golden-section search on
/// ln T over [`T_MIN`, `T_MAX`] runs until the bracket is narrower than
/// [`T_TOL`].
pub fn fit_temperature(holdout: &EvalSet) -> Result<TemperatureFit> {
    let mut buf = vec![0.0; holdout.num_classes()];
    let mut f = |t: f64| scaled_nll(holdout, t, &mut buf);
    let nll_before = f(1.0);

    let (mut a, mut b) = (T_MIN.ln(), T_MAX.ln());
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    let mut path = Vec::new();
    let mut iterations = 0;
    while b.exp() - a.exp() >= T_TOL {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d.exp());
        }
        let best = if fc <= fd { (c.exp(), fc) } else { (d.exp(), fd) };
        match path.last() {
            Some(&(_, prev)) if best.1 > prev => {}
            _ => path.push(best),
        }
    }
    let (mut temperature, mut nll_after) = path.last().copied().unwrap_or((1.0, nll_before));
    if nll_before < nll_after {
        temperature = 1.0;
        nll_after = nll_before;
    }

    let mut warnings = Vec::new();
    if holdout.len() < holdout.num_classes() {
        warnings.push(format!(
            "holdout has {} samples for {} classes; the fit is unreliable",
            holdout.len(),
            holdout.num_classes()
        ));
    }
    if temperature - T_MIN < 10.0 * T_TOL || T_MAX - temperature < 10.0 * T_TOL * T_MAX {
        warnings.push(format!("temperature {temperature} sits at the search boundary"));
    }
    Ok(TemperatureFit {
        temperature,
        nll_before,
        nll_after,
        iterations,
        warning: (!warnings.is_empty()).then(|| warnings.join("; ")),
        path,
    })
}

/// Divides every logit by `temperature`.
pub fn apply_temperature(eval: &EvalSet, temperature: f64) -> Result<EvalSet> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(FpError::invalid_param(format!("temperature must be positive, got {temperature}")));
    }
    eval.with_logits(eval.logits().iter().map(|z| z / temperature).collect())
}
