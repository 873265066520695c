//! SGD with momentum, the SAM step and SWA weight averaging, on flat
//! parameter vectors.

use crate::error::Result;

/// Below this gradient norm SAM does not perturb.
pub const SAM_MIN_GRAD_NORM: f64 = 1e-12;

/// Heavy-ball SGD with coupled weight decay:
/// `v ← μ v + (g + λ θ)`, `θ ← θ − α v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: vec![0.0; num_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            let d = g + self.weight_decay * *p;
            *v = self.momentum * *v + d;
            *p -= lr * *v;
        }
    }
}

/// First-order worst-case weight perturbation `ρ g / ‖g‖₂` over the whole
/// parameter vector; zero when the gradient vanishes.
pub fn sam_perturb(grad: &[f64], rho: f64) -> Vec<f64> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm < SAM_MIN_GRAD_NORM {
        return vec![0.0; grad.len()];
    }
    grad.iter().map(|g| g * rho / norm).collect()
}

/// One SAM update. `grad_fn` returns the loss and gradient at a parameter
/// vector. The gradient at `θ` gives the perturbation `ε̂`; the gradient at
/// `θ + ε̂` drives the optimizer step on `θ`. Returns the loss at `θ`.
pub fn sam_step<F>(params: &mut [f64], mut grad_fn: F, rho: f64, opt: &mut SgdMomentum, lr: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (loss, grad) = grad_fn(params)?;
    let eps = sam_perturb(&grad, rho);
    let perturbed: Vec<f64> = params.iter().zip(&eps).map(|(&p, &e)| if e == 0.0 { p } else { p + e }).collect();
    let (_, sharp_grad) = grad_fn(&perturbed)?;
    opt.step(params, &sharp_grad, lr);
    Ok(loss)
}

/// Plain SGD counterpart of [`sam_step`].
pub fn sgd_step<F>(params: &mut [f64], mut grad_fn: F, opt: &mut SgdMomentum, lr: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (loss, grad) = grad_fn(params)?;
    opt.step(params, &grad, lr);
    Ok(loss)
}

/// Running average of weight checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SwaState {
    pub params: Vec<f64>,
    pub count: usize,
}

impl SwaState {
    pub fn new(num_params: usize) -> Self {
        Self { params: vec![0.0; num_params], count: 0 }
    }

    /// `θ_swa ← (θ_swa · s + θ) / (s + 1)`.
    pub fn update(&mut self, theta: &[f64]) {
        let s = self.count as f64;
        for (avg, t) in self.params.iter_mut().zip(theta) {
            *avg = (*avg * s + t) / (s + 1.0);
        }
        self.count += 1;
    }
}
