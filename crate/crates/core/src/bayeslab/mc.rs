use super::mixture::{model_msp, MixtureSpec, OodDensity};
use crate::error::{FpError, Result};
use crate::evalcore::{fmt_num, logsumexp};
use crate::rng::rng_for;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

const TAG_IN: u64 = 0x1A;
const TAG_OUT: u64 = 0x0B;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreId {
    TruePosteriorMax,
    DensityRatio,
    MspOfModel,
}

impl ScoreId {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TruePosteriorMax => "true_posterior_max",
            Self::DensityRatio => "density_ratio",
            Self::MspOfModel => "msp_of_model",
        }
    }
}

impl fmt::Display for ScoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreId {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_posterior_max" => Ok(Self::TruePosteriorMax),
            "density_ratio" => Ok(Self::DensityRatio),
            "msp_of_model" => Ok(Self::MspOfModel),
            other => Err(FpError::invalid_param(format!("unknown rule score `{other}`"))),
        }
    }
}

/// Keeps `x` (g(x) = 1) iff `score(x) ≥ delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub score: ScoreId,
    pub delta: f64,
}

impl ThresholdRule {
    /// Chow's rule: true posterior maximum against `1 − c`.
    pub fn chow(spec: &MixtureSpec) -> Self {
        Self { score: ScoreId::TruePosteriorMax, delta: spec.chow_threshold() }
    }

    /// Density-ratio rule at `(1 − π_in)/π_in`.
    pub fn density_ratio(spec: &MixtureSpec) -> Self {
        Self { score: ScoreId::DensityRatio, delta: spec.ood_threshold() }
    }

    pub fn accept_all(score: ScoreId) -> Self {
        Self { score, delta: f64::NEG_INFINITY }
    }

    pub fn reject_all(score: ScoreId) -> Self {
        Self { score, delta: f64::INFINITY }
    }

    pub fn accepts(&self, spec: &MixtureSpec, x: &[f64]) -> Result<bool> {
        Ok(score_key(spec, self.score, x)? >= key_threshold(self.score, self.delta))
    }
}

/// Rule score at `x`. The density ratio may be `+∞` (outside the OOD
/// support) or underflow to 0.
pub fn rule_score(spec: &MixtureSpec, score: ScoreId, x: &[f64]) -> Result<f64> {
    let key = score_key(spec, score, x)?;
    Ok(if score == ScoreId::DensityRatio { key.exp() } else { key })
}

/// Score in the space where thresholds are compared: the density ratio is
/// compared on the log scale.
fn score_key(spec: &MixtureSpec, score: ScoreId, x: &[f64]) -> Result<f64> {
    spec.check_point(x)?;
    Ok(match score {
        ScoreId::TruePosteriorMax => {
            let joint = spec.class_joint_log(x);
            let top = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (top - logsumexp(&joint)).exp()
        }
        ScoreId::DensityRatio => spec.log_density_ratio(x),
        ScoreId::MspOfModel => model_msp(spec, x)?,
    })
}

fn key_threshold(score: ScoreId, delta: f64) -> f64 {
    match score {
        ScoreId::DensityRatio if delta <= 0.0 => f64::NEG_INFINITY,
        ScoreId::DensityRatio => delta.ln(),
        _ => delta,
    }
}

/// Monte-Carlo settings. `n_mc` points are drawn from the in-distribution
/// mixture and, for the OOD risk, `n_mc` more from the OOD density. The draw
/// is split into `shards` streams with derived seeds; results depend on
/// `(seed, shards)` only, never on `threads`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_mc: usize,
    pub seed: u64,
    pub shards: usize,
    pub threads: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_mc: 100_000, seed: 0, shards: 1, threads: 1 }
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.n_mc < 2 {
            return Err(FpError::invalid_param("n_mc must be >= 2"));
        }
        if self.shards == 0 || self.shards > self.n_mc {
            return Err(FpError::invalid_param("shards must lie in [1, n_mc]"));
        }
        Ok(())
    }

    fn shard_len(&self, s: usize) -> usize {
        self.n_mc / self.shards + usize::from(s < self.n_mc % self.shards)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub stderr: f64,
}

/// Scores of a shared Monte-Carlo sample, reused across thresholds.
struct McSample {
    in_keys: Vec<f64>,
    /// Bayes classifier wrong on this in-distribution draw.
    in_wrong: Vec<bool>,
    out_keys: Vec<f64>,
}

fn draw_gaussian<R: Rng>(rng: &mut R, mean: &[f64], var: f64, x: &mut [f64]) {
    let sd = var.sqrt();
    for (v, m) in x.iter_mut().zip(mean) {
        let z: f64 = rng.sample(StandardNormal);
        *v = m + sd * z;
    }
}

fn draw_shard(spec: &MixtureSpec, score: ScoreId, with_out: bool, cfg: &McConfig, shard: usize) -> Result<McSample> {
    let n = cfg.shard_len(shard);
    let d = spec.dim();
    let mut x = vec![0.0; d];
    let mut rng = rng_for(cfg.seed, TAG_IN ^ ((shard as u64) << 8));
    let mut in_keys = Vec::with_capacity(n);
    let mut in_wrong = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = spec.num_classes() - 1;
        for (k, c) in spec.classes.iter().enumerate() {
            acc += c.prior;
            if u < acc {
                y = k;
                break;
            }
        }
        let c = &spec.classes[y];
        draw_gaussian(&mut rng, &c.mean, c.var, &mut x);
        in_keys.push(score_key(spec, score, &x)?);
        in_wrong.push(spec.bayes_class(&x) != y);
    }
    let mut out_keys = Vec::new();
    if with_out {
        let mut rng = rng_for(cfg.seed, TAG_OUT ^ ((shard as u64) << 8));
        out_keys.reserve(n);
        for _ in 0..n {
            match &spec.ood {
                OodDensity::Gaussian { mean, var } => draw_gaussian(&mut rng, mean, *var, &mut x),
                OodDensity::UniformBox { low, high } => {
                    for ((v, l), h) in x.iter_mut().zip(low).zip(high) {
                        *v = rng.random_range(*l..*h);
                    }
                }
            }
            out_keys.push(score_key(spec, score, &x)?);
        }
    }
    Ok(McSample { in_keys, in_wrong, out_keys })
}

#[cfg(not(target_arch = "wasm32"))]
fn draw_shards(spec: &MixtureSpec, score: ScoreId, with_out: bool, cfg: &McConfig) -> Result<Vec<McSample>> {
    let threads = cfg.threads.clamp(1, cfg.shards);
    if threads == 1 {
        return (0..cfg.shards).map(|s| draw_shard(spec, score, with_out, cfg, s)).collect();
    }
    let mut slots: Vec<Option<Result<McSample>>> = (0..cfg.shards).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(cfg.shards.div_ceil(threads)).enumerate() {
            let base = w * cfg.shards.div_ceil(threads);
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(draw_shard(spec, score, with_out, cfg, base + i));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every shard drawn")).collect()
}

#[cfg(target_arch = "wasm32")]
fn draw_shards(spec: &MixtureSpec, score: ScoreId, with_out: bool, cfg: &McConfig) -> Result<Vec<McSample>> {
    (0..cfg.shards).map(|s| draw_shard(spec, score, with_out, cfg, s)).collect()
}

fn draw(spec: &MixtureSpec, score: ScoreId, with_out: bool, cfg: &McConfig) -> Result<McSample> {
    spec.validate()?;
    cfg.validate()?;
    let mut all = McSample { in_keys: Vec::new(), in_wrong: Vec::new(), out_keys: Vec::new() };
    for s in draw_shards(spec, score, with_out, cfg)? {
        all.in_keys.extend(s.in_keys);
        all.in_wrong.extend(s.in_wrong);
        all.out_keys.extend(s.out_keys);
    }
    Ok(all)
}

/// Mean and standard error of a two-valued loss taking `a` on `n_a` draws
/// and `b` on the remaining ones.
fn mean_se(a: f64, n_a: usize, b: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let fa = n_a as f64 / nf;
    let mean = fa * a + (1.0 - fa) * b;
    let var = fa * (1.0 - fa) * (a - b) * (a - b) * nf / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

fn fp_from(sample: &McSample, key_thr: f64, cost: f64) -> RiskEstimate {
    // losses are 0 (accepted, right), 1 (accepted, wrong) or c (rejected)
    let (mut wrong, mut rejected) = (0usize, 0usize);
    for (&k, &w) in sample.in_keys.iter().zip(&sample.in_wrong) {
        if k < key_thr {
            rejected += 1;
        } else if w {
            wrong += 1;
        }
    }
    let n = sample.in_keys.len() as f64;
    let (pw, pr) = (wrong as f64 / n, rejected as f64 / n);
    let risk = pw + cost * pr;
    let second = pw + cost * cost * pr;
    let var = (second - risk * risk).max(0.0) * n / (n - 1.0);
    RiskEstimate { risk, stderr: (var / n).sqrt() }
}

fn ood_from(sample: &McSample, key_thr: f64, pi_in: f64) -> RiskEstimate {
    let count = |keys: &[f64], reject: bool| keys.iter().filter(|&&k| (k < key_thr) == reject).count();
    let rate_se = |hits: usize, n: usize| mean_se(1.0, hits, 0.0, n);
    let (r_in, se_in) = rate_se(count(&sample.in_keys, true), sample.in_keys.len());
    let (a_out, se_out) = rate_se(count(&sample.out_keys, false), sample.out_keys.len());
    RiskEstimate {
        risk: pi_in * r_in + (1.0 - pi_in) * a_out,
        stderr: ((pi_in * se_in).powi(2) + ((1.0 - pi_in) * se_out).powi(2)).sqrt(),
    }
}

/// Failure-prediction risk `E[c·𝕀(g=0) + 𝕀(f*(x)≠y)·𝕀(g=1)]` under the
/// in-distribution mixture, with `f*` the Bayes classifier.
pub fn fp_risk(spec: &MixtureSpec, rule: &ThresholdRule, mc: &McConfig) -> Result<RiskEstimate> {
    let sample = draw(spec, rule.score, false, mc)?;
    Ok(fp_from(&sample, key_threshold(rule.score, rule.delta), spec.reject_cost))
}

/// OOD risk `π_in·P(reject | in) + (1 − π_in)·P(accept | out)`, estimated
/// from separate in- and out-distribution draws.
pub fn ood_risk(spec: &MixtureSpec, rule: &ThresholdRule, mc: &McConfig) -> Result<RiskEstimate> {
    let sample = draw(spec, rule.score, true, mc)?;
    Ok(ood_from(&sample, key_threshold(rule.score, rule.delta), spec.pi_in))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub fp_risk: f64,
    pub fp_stderr: f64,
    pub ood_risk: f64,
    pub ood_stderr: f64,
}

/// Both risks of `score ≥ δ` for every `δ` in `grid`, on one shared sample
/// (common random numbers across thresholds).
pub fn sweep_thresholds(spec: &MixtureSpec, score: ScoreId, grid: &[f64], mc: &McConfig) -> Result<Vec<SweepRow>> {
    if grid.iter().any(|d| d.is_nan()) {
        return Err(FpError::invalid_param("threshold grid contains NaN"));
    }
    let sample = draw(spec, score, true, mc)?;
    Ok(grid
        .iter()
        .map(|&delta| {
            let t = key_threshold(score, delta);
            let fp = fp_from(&sample, t, spec.reject_cost);
            let ood = ood_from(&sample, t, spec.pi_in);
            SweepRow { delta, fp_risk: fp.risk, fp_stderr: fp.stderr, ood_risk: ood.risk, ood_stderr: ood.stderr }
        })
        .collect())
}

/// `n` evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// CSV `delta,fp_risk,fp_stderr,ood_risk,ood_stderr`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "delta,fp_risk,fp_stderr,ood_risk,ood_stderr")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(r.delta),
            fmt_num(r.fp_risk),
            fmt_num(r.fp_stderr),
            fmt_num(r.ood_risk),
            fmt_num(r.ood_stderr)
        )?;
    }
    Ok(())
}
