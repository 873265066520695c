use super::mixture::{MixtureSpec, OodDensity};
use crate::error::{FpError, Result};
use serde::{Deserialize, Serialize};

const SCAN_STEPS: usize = 40_000;
const BISECT_ITERS: usize = 100;
const SCAN_SIGMAS: f64 = 12.0;
/// Log-ratio differences this small, relative to the log densities, count as
/// ties with the threshold (and so reject).
pub const TIE_RTOL: f64 = 1e-12;

/// Closed interval of the real line; endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// `max_y P(y|x) < 1 − c`.
    Chow,
    /// `p(x|in) / p(x|out) ≤ (1 − π_in) / π_in`.
    DensityRatio,
}

/// A reject region: explicit intervals in 1-D, a membership test in 2-D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectRegion {
    Intervals { kind: RegionKind, intervals: Vec<Interval> },
    Indicator { kind: RegionKind },
}

/// Exact membership, independent of any interval approximation.
pub fn rejects(spec: &MixtureSpec, kind: RegionKind, x: &[f64]) -> bool {
    match kind {
        RegionKind::Chow => {
            let joint = spec.class_joint_log(x);
            let lse = crate::evalcore::logsumexp(&joint);
            let top = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (top - lse).exp() < spec.chow_threshold()
        }
        RegionKind::DensityRatio => {
            let lr = spec.log_density_ratio(x);
            let scale = spec.in_log_density(x).abs().max(1.0);
            lr <= spec.ood_threshold().ln() + TIE_RTOL * scale
        }
    }
}

impl RejectRegion {
    pub fn kind(&self) -> RegionKind {
        match self {
            Self::Intervals { kind, .. } | Self::Indicator { kind } => *kind,
        }
    }

    pub fn contains(&self, spec: &MixtureSpec, x: &[f64]) -> bool {
        match self {
            Self::Intervals { intervals, .. } => intervals.iter().any(|iv| iv.contains(x[0])),
            Self::Indicator { kind } => rejects(spec, *kind, x),
        }
    }

    /// `Some(true)` for a 1-D region with no intervals; `None` in 2-D.
    pub fn is_empty(&self) -> Option<bool> {
        match self {
            Self::Intervals { intervals, .. } => Some(intervals.is_empty()),
            Self::Indicator { .. } => None,
        }
    }

    pub fn intervals(&self) -> Option<&[Interval]> {
        match self {
            Self::Intervals { intervals, .. } => Some(intervals),
            Self::Indicator { .. } => None,
        }
    }
}

fn scan_range(spec: &MixtureSpec) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut widen = |m: f64, s: f64| {
        lo = lo.min(m - SCAN_SIGMAS * s);
        hi = hi.max(m + SCAN_SIGMAS * s);
    };
    for c in &spec.classes {
        widen(c.mean[0], c.var.sqrt());
    }
    match &spec.ood {
        OodDensity::Gaussian { mean, var } => widen(mean[0], var.sqrt()),
        OodDensity::UniformBox { low, high } => {
            let pad = 0.05 * (high[0] - low[0]);
            lo = lo.min(low[0] - pad);
            hi = hi.max(high[0] + pad);
        }
    }
    (lo, hi)
}

/// Locates the rejected set of a 1-D membership test by a dense scan with
/// bisection at every change of membership. The ends of the scan range are
/// extended to infinity when rejected there.
fn scan_intervals(spec: &MixtureSpec, kind: RegionKind) -> Vec<Interval> {
    let (lo, hi) = scan_range(spec);
    let inside = |x: f64| rejects(spec, kind, &[x]);
    let step = (hi - lo) / SCAN_STEPS as f64;
    let refine = |mut a: f64, mut b: f64| {
        // a and b differ in membership; returns the crossing point
        let ma = inside(a);
        for _ in 0..BISECT_ITERS {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            if inside(m) == ma {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let mut out = Vec::new();
    let mut prev_x = lo;
    let mut prev = inside(lo);
    let mut open = prev.then_some(f64::NEG_INFINITY);
    for i in 1..=SCAN_STEPS {
        let x = if i == SCAN_STEPS { hi } else { lo + step * i as f64 };
        let cur = inside(x);
        if cur != prev {
            let edge = refine(prev_x, x);
            if cur {
                open = Some(edge);
            } else if let Some(start) = open.take() {
                out.push(Interval { lo: start, hi: edge });
            }
        }
        prev = cur;
        prev_x = x;
    }
    if let Some(start) = open {
        out.push(Interval { lo: start, hi: f64::INFINITY });
    }
    out
}

fn closed_form_chow(spec: &MixtureSpec) -> Option<Vec<Interval>> {
    if spec.dim() != 1 || spec.num_classes() != 2 {
        return None;
    }
    let (a, b) = (&spec.classes[0], &spec.classes[1]);
    if a.prior != b.prior || a.var != b.var || a.mean[0] == b.mean[0] {
        return None;
    }
    let c = spec.reject_cost;
    let half = a.var / (b.mean[0] - a.mean[0]).abs() * ((1.0 - c) / c).ln();
    if half <= 0.0 {
        return Some(Vec::new());
    }
    let mid = 0.5 * (a.mean[0] + b.mean[0]);
    Some(vec![Interval { lo: mid - half, hi: mid + half }])
}

/// Reject region of Chow's rule. The equal-prior, equal-variance 1-D
/// two-class case is returned in closed form
/// `|x − midpoint| < σ²/|Δμ| · ln((1 − c)/c)`.
pub fn chow_reject_region(spec: &MixtureSpec) -> Result<RejectRegion> {
    spec.validate()?;
    let kind = RegionKind::Chow;
    if spec.dim() == 2 {
        return Ok(RejectRegion::Indicator { kind });
    }
    if spec.num_classes() == 2 && spec.reject_cost >= 0.5 {
        return Ok(RejectRegion::Intervals { kind, intervals: Vec::new() });
    }
    let intervals = closed_form_chow(spec).unwrap_or_else(|| scan_intervals(spec, kind));
    Ok(RejectRegion::Intervals { kind, intervals })
}

/// Reject region of the density-ratio rule. Points where the ratio equals
/// the threshold are rejected.
pub fn ood_reject_region(spec: &MixtureSpec) -> Result<RejectRegion> {
    spec.validate()?;
    let kind = RegionKind::DensityRatio;
    if spec.dim() == 2 {
        return Ok(RejectRegion::Indicator { kind });
    }
    Ok(RejectRegion::Intervals { kind, intervals: scan_intervals(spec, kind) })
}

/// A point where the two Bayes rules disagree: the true posterior is nearly
/// certain, yet the point is rejected as out-of-distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentWitness {
    pub x: Vec<f64>,
    pub posterior_max: f64,
    pub log_density_ratio: f64,
    pub log_threshold: f64,
}

/// Walks outward from the class mean farthest from the class centroid, in
/// steps of a quarter standard deviation up to `max_sigmas`, and returns
/// the first point whose posterior maximum exceeds `min_posterior` while the
/// density-ratio rule rejects it.
pub fn misalignment_witness(spec: &MixtureSpec, min_posterior: f64, max_sigmas: f64) -> Result<Option<MisalignmentWitness>> {
    spec.validate()?;
    let d = spec.dim();
    let k = spec.num_classes() as f64;
    let centroid: Vec<f64> = (0..d).map(|j| spec.classes.iter().map(|c| c.mean[j]).sum::<f64>() / k).collect();
    let dist = |m: &[f64]| m.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let far = spec
        .classes
        .iter()
        .max_by(|a, b| dist(&a.mean).total_cmp(&dist(&b.mean)))
        .expect("validated");
    let norm = dist(&far.mean);
    let dir: Vec<f64> = if norm > 0.0 {
        far.mean.iter().zip(&centroid).map(|(a, b)| (a - b) / norm).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    };
    let sigma = far.var.sqrt();
    let log_thr = spec.ood_threshold().ln();
    let steps = (max_sigmas * 4.0).ceil() as usize;
    for i in 0..=steps {
        let t = i as f64 * 0.25 * sigma;
        let x: Vec<f64> = far.mean.iter().zip(&dir).map(|(m, u)| m + t * u).collect();
        let post = super::true_posterior(spec, &x)?;
        let pmax = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lr = spec.log_density_ratio(&x);
        if pmax > min_posterior && lr <= log_thr {
            return Ok(Some(MisalignmentWitness { x, posterior_max: pmax, log_density_ratio: lr, log_threshold: log_thr }));
        }
    }
    Ok(None)
}

/// Checks an interval list against the exact membership test on a grid.
pub fn agreement(spec: &MixtureSpec, region: &RejectRegion, lo: f64, hi: f64, n: usize) -> Result<f64> {
    if spec.dim() != 1 || n < 2 {
        return Err(FpError::invalid_input("agreement check needs a 1-D mixture and at least two grid points"));
    }
    let hits = (0..n)
        .filter(|&i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            region.contains(spec, &[x]) == rejects(spec, region.kind(), &[x])
        })
        .count();
    Ok(hits as f64 / n as f64)
}
