//! Training loop for the built-in MLP: SGD, SAM, SWA and FMFP (SAM steps
//! plus SWA averaging under a cyclical learning rate).

use super::data::Dataset;
use super::loss::{loss_and_grad, Batch, LossAux, LossSpec};
use super::mlp::MlpModel;
use super::optim::{sam_step, sgd_step, SgdMomentum, SwaState};
use crate::error::{FpError, Result};
use crate::evalcore::{argmax, fmt_num, softmax_into};
use crate::metrics::auroc;
use crate::rng::rng_for;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

pub const DEFAULT_SAM_RHO: f64 = 0.05;
/// Lowest point of the cyclical schedule as a fraction of `base_lr`.
pub const CYCLIC_LR_FLOOR: f64 = 0.1;

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_MIXUP: u64 = 3;
const TAG_OUTLIER: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Sgd,
    Sam,
    Swa,
    Fmfp,
}

impl TrainMethod {
    pub fn uses_sam(self) -> bool {
        matches!(self, Self::Sam | Self::Fmfp)
    }

    pub fn uses_swa(self) -> bool {
        matches!(self, Self::Swa | Self::Fmfp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Sam => "sam",
            Self::Swa => "swa",
            Self::Fmfp => "fmfp",
        }
    }
}

impl fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMethod {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "sam" => Ok(Self::Sam),
            "swa" => Ok(Self::Swa),
            "fmfp" => Ok(Self::Fmfp),
            other => Err(FpError::invalid_param(format!("unknown training method `{other}`"))),
        }
    }
}

/// Training recipe.
///
/// `sam_rho = None` resolves to [`DEFAULT_SAM_RHO`] for the SAM-based methods
/// and to 0 otherwise; `swa_start = None` resolves to three quarters of the
/// epochs. Epochs are counted from 0; with averaging enabled, a checkpoint is
/// collected at the end of every `swa_cycle`-th epoch from `swa_start` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub loss: LossSpec,
    pub mixup_alpha: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub sam_rho: Option<f64>,
    pub swa_start: Option<usize>,
    pub swa_cycle: usize,
    /// Cyclical schedule during the averaging phase; constant `base_lr` when off.
    pub cyclic_lr: bool,
    pub sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: TrainMethod::Sgd,
            loss: LossSpec::Ce,
            mixup_alpha: None,
            epochs: 200,
            batch_size: 32,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            sam_rho: None,
            swa_start: None,
            swa_cycle: 5,
            cyclic_lr: true,
            sizes: vec![2, 32, 32, 2],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn rho(&self) -> f64 {
        self.sam_rho.unwrap_or(if self.method.uses_sam() { DEFAULT_SAM_RHO } else { 0.0 })
    }

    pub fn swa_start_epoch(&self) -> usize {
        self.swa_start.unwrap_or(3 * self.epochs / 4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FpError::InvalidParam(msg));
        self.loss.validate()?;
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("mixup alpha must be > 0, got {a}"));
            }
        }
        let rho = self.rho();
        if !(rho >= 0.0 && rho.is_finite()) {
            return bad(format!("SAM radius must be >= 0, got {rho}"));
        }
        if !self.method.uses_sam() && rho != 0.0 {
            return bad(format!("method {} takes no SAM radius (got {rho})", self.method));
        }
        if self.method.uses_swa() {
            if self.swa_cycle == 0 {
                return bad("swa cycle must be >= 1".into());
            }
            if self.swa_start_epoch() >= self.epochs {
                return bad(format!(
                    "swa start {} must be below the epoch count {}",
                    self.swa_start_epoch(),
                    self.epochs
                ));
            }
        }
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return bad(format!("invalid layer sizes {:?}", self.sizes));
        }
        Ok(())
    }

    /// Learning rate for step `step` (0-based) of `steps` in `epoch`.
    ///
    /// Within each averaging cycle the rate falls linearly from `base_lr`
    /// to `CYCLIC_LR_FLOOR · base_lr`, reaching the floor on the last step
    /// before a checkpoint is collected.
    pub fn learning_rate(&self, epoch: usize, step: usize, steps: usize) -> f64 {
        let start = self.swa_start_epoch();
        if !(self.method.uses_swa() && self.cyclic_lr) || epoch < start || steps == 0 {
            return self.base_lr;
        }
        let c = self.swa_cycle;
        let done = ((epoch - start) % c) * steps + step + 1;
        let frac = done as f64 / (c * steps) as f64;
        self.base_lr * (1.0 - (1.0 - CYCLIC_LR_FLOOR) * frac)
    }

    fn collects_checkpoint(&self, epoch: usize) -> bool {
        let start = self.swa_start_epoch();
        self.method.uses_swa() && epoch >= start && (epoch - start + 1).is_multiple_of(self.swa_cycle)
    }
}

/// Per-sample record of how often the prediction was correct.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlHistory {
    correct: Vec<u32>,
    seen: Vec<u32>,
}

impl CrlHistory {
    pub fn new(n: usize) -> Self {
        Self { correct: vec![0; n], seen: vec![0; n] }
    }

    pub fn record(&mut self, index: usize, was_correct: bool) {
        self.seen[index] += 1;
        self.correct[index] += u32::from(was_correct);
    }

    /// Historical correct rate; 0 for a sample never examined.
    pub fn rate(&self, index: usize) -> f64 {
        match self.seen[index] {
            0 => 0.0,
            s => f64::from(self.correct[index]) / f64::from(s),
        }
    }

    pub fn counts(&self, index: usize) -> (u32, u32) {
        (self.correct[index], self.seen[index])
    }
}

pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub outliers: Option<&'a Dataset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    /// MSP failure-prediction AUROC; `None` when the test predictions are all
    /// right or all wrong.
    pub test_auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub final_model: MlpModel,
    pub swa_model: Option<MlpModel>,
    pub history: Vec<EpochRecord>,
}

impl TrainResult {
    /// The averaged model when averaging collected anything, else the last iterate.
    pub fn output_model(&self) -> &MlpModel {
        self.swa_model.as_ref().unwrap_or(&self.final_model)
    }

    /// CSV `epoch,train_loss,test_acc,test_auroc`.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,test_acc,test_auroc")?;
        for r in &self.history {
            let auroc = r.test_auroc.map(fmt_num).unwrap_or_default();
            writeln!(out, "{},{},{},{}", r.epoch, fmt_num(r.train_loss), fmt_num(r.test_acc), auroc)?;
        }
        Ok(())
    }
}

/// Test accuracy and MSP failure-prediction AUROC of a model.
pub fn evaluate_model(model: &MlpModel, data: &Dataset) -> (f64, Option<f64>) {
    if data.is_empty() {
        return (f64::NAN, None);
    }
    let k = model.num_classes();
    let logits = model.logits(&data.x, data.len());
    let mut p = vec![0.0; k];
    let mut msp = Vec::with_capacity(data.len());
    let mut correct = Vec::with_capacity(data.len());
    for (row, &y) in logits.chunks_exact(k).zip(&data.labels) {
        softmax_into(row, &mut p);
        msp.push(p.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        correct.push(argmax(row) == y);
    }
    let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
    (acc, auroc(&msp, &correct).ok())
}

fn check_data(config: &TrainConfig, data: &TrainData<'_>) -> Result<()> {
    let d = config.sizes[0];
    let k = *config.sizes.last().expect("validated");
    for (name, set) in [("train", data.train), ("test", data.test)] {
        if set.dim != d {
            return Err(FpError::invalid_input(format!("{name} inputs have width {}, model expects {d}", set.dim)));
        }
        if set.labels.iter().any(|&y| y >= k) {
            return Err(FpError::invalid_input(format!("{name} labels exceed the {k} model classes")));
        }
    }
    if config.loss.needs_outliers() {
        match data.outliers {
            Some(o) if o.dim == d && !o.is_empty() => {}
            Some(_) => return Err(FpError::invalid_input("outlier set is empty or has the wrong width")),
            None => return Err(FpError::invalid_input("outlier exposure needs an outlier set")),
        }
    }
    Ok(())
}

/// Trains an MLP. Deterministic given `config.seed`; single-threaded.
pub fn train(config: &TrainConfig, data: &TrainData<'_>) -> Result<TrainResult> {
    config.validate()?;
    check_data(config, data)?;
    let train = data.train;
    let n = train.len();
    let k = *config.sizes.last().expect("validated");
    let d = config.sizes[0];

    let mut model = MlpModel::init(&config.sizes, &mut rng_for(config.seed, TAG_INIT))?;
    let mut scratch = model.clone();
    let mut opt = SgdMomentum::new(model.params().len(), config.momentum, config.weight_decay);
    let mut swa = config.method.uses_swa().then(|| SwaState::new(model.params().len()));
    let mut crl = config.loss.needs_history().then(|| CrlHistory::new(n));
    let mut shuffle_rng = rng_for(config.seed, TAG_SHUFFLE);
    let mut mixup_rng = rng_for(config.seed, TAG_MIXUP);
    let mut outlier_rng = rng_for(config.seed, TAG_OUTLIER);
    let beta = config
        .mixup_alpha
        .map(|a| Beta::new(a, a).map_err(|e| FpError::invalid_param(format!("mixup alpha: {e}"))))
        .transpose()?;
    let rho = config.rho();
    let m = config.batch_size;
    let steps = n.div_ceil(m);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(m).enumerate() {
            let bm = idx.len();
            let mut x = Vec::with_capacity(bm * d);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            for &i in idx {
                x.extend_from_slice(train.row(i));
            }
            let mut batch = Batch::one_hot(x, &labels, k);
            if let Some(beta) = &beta {
                let lam: f64 = beta.sample(&mut mixup_rng);
                let mut perm: Vec<usize> = (0..bm).collect();
                perm.shuffle(&mut mixup_rng);
                let (x0, t0) = (batch.x.clone(), batch.targets.clone());
                for (i, &j) in perm.iter().enumerate() {
                    for c in 0..d {
                        batch.x[i * d + c] = lam * x0[i * d + c] + (1.0 - lam) * x0[j * d + c];
                    }
                    for c in 0..k {
                        batch.targets[i * k + c] = lam * t0[i * k + c] + (1.0 - lam) * t0[j * k + c];
                    }
                }
            }
            let outliers: Option<Vec<f64>> = if config.loss.needs_outliers() {
                let o = data.outliers.expect("checked");
                let mut buf = Vec::with_capacity(bm * d);
                for _ in 0..bm {
                    buf.extend_from_slice(o.row(outlier_rng.random_range(0..o.len())));
                }
                Some(buf)
            } else {
                None
            };
            let rates: Option<Vec<f64>> = crl.as_ref().map(|h| idx.iter().map(|&i| h.rate(i)).collect());
            let aux = LossAux { outliers: outliers.as_deref(), crl_rates: rates.as_deref() };

            let mut first_logits: Option<Vec<f64>> = None;
            let grad_fn = |p: &[f64]| {
                scratch.set_params(p);
                let out = loss_and_grad(&scratch, &batch, &config.loss, &aux)?;
                if first_logits.is_none() {
                    first_logits = Some(out.logits);
                }
                Ok((out.loss, out.grad))
            };
            let lr = config.learning_rate(epoch, step, steps);
            let loss = if config.method.uses_sam() {
                sam_step(model.params_mut(), grad_fn, rho, &mut opt, lr)?
            } else {
                sgd_step(model.params_mut(), grad_fn, &mut opt, lr)?
            };
            if !loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
                return Err(FpError::DivergedTraining { epoch: epoch + 1 });
            }
            if let (Some(h), Some(z)) = (crl.as_mut(), first_logits.as_ref()) {
                for (r, &i) in idx.iter().enumerate() {
                    h.record(i, argmax(&z[r * k..(r + 1) * k]) == train.labels[i]);
                }
            }
            loss_sum += loss * bm as f64;
        }
        if let Some(state) = swa.as_mut() {
            if config.collects_checkpoint(epoch) {
                state.update(model.params());
            }
        }
        let (test_acc, test_auroc) = evaluate_model(&model, data.test);
        let train_loss = if n == 0 { 0.0 } else { loss_sum / n as f64 };
        history.push(EpochRecord { epoch: epoch + 1, train_loss, test_acc, test_auroc });
    }

    let swa_model = match swa {
        Some(state) if state.count > 0 => Some(MlpModel::from_params(&config.sizes, state.params)?),
        _ => None,
    };
    Ok(TrainResult { final_model: model, swa_model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatopt::data::{make_dataset, DatasetKind};

    fn moons(seed: u64) -> (Dataset, Dataset) {
        (
            make_dataset(DatasetKind::TwoMoons, 120, 0.2, 0.1, seed).unwrap(),
            make_dataset(DatasetKind::TwoMoons, 200, 0.2, 0.0, seed + 1000).unwrap(),
        )
    }

    fn small(method: TrainMethod) -> TrainConfig {
        TrainConfig {
            method,
            epochs: 8,
            batch_size: 16,
            sizes: vec![2, 8, 2],
            swa_start: Some(4),
            swa_cycle: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (tr, te) = moons(1);
        let cfg = TrainConfig { epochs: 0, ..small(TrainMethod::Sgd) };
        let out = train(&cfg, &TrainData { train: &tr, test: &te, outliers: None }).unwrap();
        let init = MlpModel::init(&cfg.sizes, &mut rng_for(cfg.seed, TAG_INIT)).unwrap();
        assert_eq!(out.final_model, init);
        assert!(out.history.is_empty());
        assert!(out.swa_model.is_none());
    }

    #[test]
    fn same_seed_same_history() {
        let (tr, te) = moons(2);
        let data = TrainData { train: &tr, test: &te, outliers: None };
        for method in [TrainMethod::Sgd, TrainMethod::Fmfp] {
            let cfg = TrainConfig { mixup_alpha: Some(0.4), ..small(method) };
            let a = train(&cfg, &data).unwrap();
            let b = train(&cfg, &data).unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(a.output_model(), b.output_model());
        }
    }

    #[test]
    fn zero_radius_sam_matches_sgd_bitwise() {
        let (tr, te) = moons(3);
        let data = TrainData { train: &tr, test: &te, outliers: None };
        let sgd = train(&small(TrainMethod::Sgd), &data).unwrap();
        let sam = train(&TrainConfig { sam_rho: Some(0.0), ..small(TrainMethod::Sam) }, &data).unwrap();
        assert_eq!(sgd.history, sam.history);
        assert_eq!(sgd.final_model.params(), sam.final_model.params());

        let swa = train(&small(TrainMethod::Swa), &data).unwrap();
        let fmfp = train(&TrainConfig { sam_rho: Some(0.0), ..small(TrainMethod::Fmfp) }, &data).unwrap();
        assert_eq!(swa.history, fmfp.history);
        assert_eq!(swa.swa_model, fmfp.swa_model);
    }

    #[test]
    fn positive_radius_changes_the_trace() {
        let (tr, te) = moons(3);
        let data = TrainData { train: &tr, test: &te, outliers: None };
        let sgd = train(&small(TrainMethod::Sgd), &data).unwrap();
        let sam = train(&small(TrainMethod::Sam), &data).unwrap();
        assert_ne!(sgd.final_model.params(), sam.final_model.params());
    }

    #[test]
    fn swa_collects_expected_checkpoints() {
        let cfg = small(TrainMethod::Swa);
        let collected: Vec<usize> = (0..cfg.epochs).filter(|&e| cfg.collects_checkpoint(e)).collect();
        assert_eq!(collected, vec![5, 7]);
    }

    #[test]
    fn cyclic_schedule_shape() {
        let cfg = small(TrainMethod::Fmfp);
        assert_eq!(cfg.learning_rate(3, 0, 4), cfg.base_lr);
        let last = cfg.learning_rate(5, 3, 4);
        assert!((last - cfg.base_lr * CYCLIC_LR_FLOOR).abs() < 1e-15);
        let mid = cfg.learning_rate(4, 3, 4);
        assert!(mid < cfg.base_lr && mid > last);
        assert_eq!(cfg.learning_rate(6, 0, 4), cfg.learning_rate(4, 0, 4));
        let flat = TrainConfig { cyclic_lr: false, ..cfg };
        assert_eq!(flat.learning_rate(5, 3, 4), flat.base_lr);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { sam_rho: Some(0.1), ..small(TrainMethod::Sgd) }.validate().is_err());
        assert!(TrainConfig { sam_rho: Some(-0.1), ..small(TrainMethod::Sam) }.validate().is_err());
        assert!(TrainConfig { swa_start: Some(8), ..small(TrainMethod::Swa) }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..small(TrainMethod::Sgd) }.validate().is_err());
        assert!(TrainConfig { mixup_alpha: Some(0.0), ..small(TrainMethod::Sgd) }.validate().is_err());
        assert_eq!(small(TrainMethod::Sam).rho(), DEFAULT_SAM_RHO);
        assert_eq!(small(TrainMethod::Swa).rho(), 0.0);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (tr, te) = moons(4);
        let cfg = TrainConfig { base_lr: 1e6, momentum: 0.0, ..small(TrainMethod::Sgd) };
        match train(&cfg, &TrainData { train: &tr, test: &te, outliers: None }) {
            Err(FpError::DivergedTraining { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn oe_and_crl_run() {
        let tr = make_dataset(DatasetKind::GaussianBlobs, 90, 0.8, 0.0, 5).unwrap();
        let te = make_dataset(DatasetKind::GaussianBlobs, 90, 0.8, 0.0, 6).unwrap();
        let ood = make_dataset(DatasetKind::RingOod, 60, 0.5, 0.0, 7).unwrap();
        let base = TrainConfig { sizes: vec![2, 8, 3], ..small(TrainMethod::Sgd) };
        let oe = TrainConfig { loss: LossSpec::CePlusOe { lambda: 0.5 }, ..base.clone() };
        assert!(train(&oe, &TrainData { train: &tr, test: &te, outliers: None }).is_err());
        let out = train(&oe, &TrainData { train: &tr, test: &te, outliers: Some(&ood) }).unwrap();
        assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
        let crl = TrainConfig { loss: LossSpec::CePlusCrl { lambda: 1.0 }, ..base };
        let out = train(&crl, &TrainData { train: &tr, test: &te, outliers: None }).unwrap();
        assert!(out.history.last().unwrap().test_acc > 0.8);
    }

    #[test]
    fn crl_history_rates() {
        let mut h = CrlHistory::new(2);
        assert_eq!(h.rate(0), 0.0);
        h.record(0, true);
        h.record(0, false);
        h.record(0, true);
        assert!((h.rate(0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.counts(0), (2, 3));
    }

    #[test]
    fn history_csv_header() {
        let (tr, te) = moons(5);
        let out = train(&small(TrainMethod::Sgd), &TrainData { train: &tr, test: &te, outliers: None }).unwrap();
        let mut buf = Vec::new();
        out.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,test_acc,test_auroc\n1,"));
        assert_eq!(text.lines().count(), 9);
    }
}
