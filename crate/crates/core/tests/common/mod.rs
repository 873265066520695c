//! Helpers shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use fpkit::flatopt::{loss_and_grad, Batch, LossAux, LossSpec, MlpModel};
use fpkit::rng::rng_from;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
pub const FD_ATOL: f64 = 1e-8;

/// Losses covered by the finite-difference check.
pub fn gradcheck_losses() -> Vec<LossSpec> {
    vec![
        LossSpec::Ce,
        LossSpec::Focal { gamma: 1.0 },
        LossSpec::Focal { gamma: 3.0 },
        LossSpec::LabelSmoothing { epsilon: 0.05 },
        LossSpec::L1Logit { lambda: 0.01 },
        LossSpec::LogitNorm { tau: 0.04 },
        LossSpec::LogitNorm { tau: 1.0 },
        LossSpec::CePlusOe { lambda: 0.5 },
        LossSpec::CePlusCrl { lambda: 1.0 },
    ]
}

#[derive(Debug, Default)]
pub struct GradcheckOutcome {
    pub probes: usize,
    pub failures: usize,
    /// Probes discarded because the loss is not smooth at the probe point.
    pub kinks: usize,
    /// Largest error as a fraction of the allowed tolerance.
    pub worst: f64,
}

struct Probe {
    model: MlpModel,
    batch: Batch,
    outliers: Vec<f64>,
    rates: Vec<f64>,
}

fn random_probe<R: Rng>(rng: &mut R) -> Probe {
    let d = rng.random_range(1..=4);
    let h = rng.random_range(1..=8);
    let k = rng.random_range(2..=3);
    let m = rng.random_range(2..=6);
    let model = MlpModel::init(&[d, h, k], rng).unwrap();
    let x: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let mut batch = Batch::one_hot(x, &labels, k);
    if rng.random_bool(0.3) {
        // soft, mixup-style targets
        for row in batch.targets.chunks_exact_mut(k) {
            let lam: f64 = rng.random_range(0.0..1.0);
            let other = rng.random_range(0..k);
            row.iter_mut().for_each(|t| *t *= lam);
            row[other] += 1.0 - lam;
        }
    }
    let outliers = (0..m * d).map(|_| rng.random_range(-4.0..4.0)).collect();
    let rates = (0..m).map(|_| f64::from(rng.random_range(0..=4u8)) / 4.0).collect();
    Probe { model, batch, outliers, rates }
}

fn loss_at(p: &Probe, spec: &LossSpec, params: &[f64]) -> f64 {
    let mut model = p.model.clone();
    model.set_params(params);
    let aux = LossAux { outliers: Some(&p.outliers), crl_rates: Some(&p.rates) };
    loss_and_grad(&model, &p.batch, spec, &aux).unwrap().loss
}

/// Backward, central and forward differences along parameter `j`.
fn differences(p: &Probe, spec: &LossSpec, j: usize, h: f64) -> (f64, f64, f64) {
    let base = p.model.params().to_vec();
    let mut plus = base.clone();
    let mut minus = base.clone();
    plus[j] += h;
    minus[j] -= h;
    let (lm, l0, lp) = (loss_at(p, spec, &minus), loss_at(p, spec, &base), loss_at(p, spec, &plus));
    ((l0 - lm) / h, (lp - lm) / (2.0 * h), (lp - l0) / h)
}

/// Compares analytic and central-difference gradients on `probes` random
/// (model, batch, parameter) triples. A probe whose one-sided slopes
/// disagree, or whose step-`h` and step-`h/10` differences disagree, sits on
/// or straddles a ReLU, hinge or top-2 tie kink and is redrawn rather than
/// counted.
pub fn gradcheck(spec: &LossSpec, probes: usize, seed: u64) -> GradcheckOutcome {
    let mut rng = rng_from(seed);
    let mut out = GradcheckOutcome::default();
    while out.probes < probes {
        let p = random_probe(&mut rng);
        let aux = LossAux { outliers: Some(&p.outliers), crl_rates: Some(&p.rates) };
        let analytic = loss_and_grad(&p.model, &p.batch, spec, &aux).unwrap().grad;
        let j = rng.random_range(0..analytic.len());
        let (back, fd, fwd) = differences(&p, spec, j, FD_STEP);
        let (_, fd_fine, _) = differences(&p, spec, j, FD_STEP / 10.0);
        let tol = |a: f64, b: f64| FD_RTOL * a.abs().max(b.abs()) + FD_ATOL;
        let one_sided_gap = (fwd - back).abs() > 1e-2 * fwd.abs().max(back.abs()) + 1e-6;
        if one_sided_gap || (fd - fd_fine).abs() > tol(fd, fd_fine) {
            out.kinks += 1;
            assert!(out.kinks < 10 * probes, "too many non-smooth probes for {spec}");
            continue;
        }
        let err = (analytic[j] - fd).abs();
        let allowed = tol(analytic[j], fd);
        out.worst = out.worst.max(err / allowed);
        if err > allowed {
            out.failures += 1;
        }
        out.probes += 1;
    }
    out
}
