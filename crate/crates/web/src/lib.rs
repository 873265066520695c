//! WebAssembly bindings behind the fpkit browser demo.
//!
//! Every export takes plain numbers or strings and returns a JSON string.
//! The `*_json` functions hold the logic and run natively too; the
//! `#[wasm_bindgen]` wrappers only turn their errors into JS exceptions.

use fpkit::bayeslab::{
    chow_reject_region, fp_risk, misalignment_witness, ood_reject_region, ood_risk, true_posterior, ClassComponent,
    McConfig, MisalignmentWitness, MixtureSpec, OodDensity, RejectRegion, RiskEstimate, ThresholdRule,
};
use fpkit::evalcore::read_eval_csv;
use fpkit::flatopt::{
    evaluate_model, make_splits, train, DatasetKind, EpochRecord, SplitSpec, TrainConfig, TrainData, TrainMethod,
};
use fpkit::metrics::{full_report, rc_curve, MetricsReport, ReportOptions, DEFAULT_ECE_BINS};
use fpkit::{ScoreKind, ScoreParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn to_json<T: Serialize>(value: &T) -> Out {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub const EXPLORER_POINTS: usize = 401;
pub const EXPLORER_MC: usize = 20_000;

#[derive(Serialize)]
struct Explorer {
    xs: Vec<f64>,
    posterior_max: Vec<f64>,
    /// `log p(x|in) − log p(x|out)`; `null` outside the OOD box.
    log_density_ratio: Vec<f64>,
    chow_threshold: f64,
    log_ood_threshold: f64,
    chow_region: RejectRegion,
    ood_region: RejectRegion,
    fp_risk_chow: RiskEstimate,
    ood_risk_density_rule: RiskEstimate,
    ood_risk_chow: RiskEstimate,
    witness: Option<MisalignmentWitness>,
}

/// Two unit-variance classes at `±separation/2` with equal priors, and a
/// uniform OOD density on `[−half_width, half_width]`.
pub fn explore_regions_json(separation: f64, reject_cost: f64, pi_in: f64, half_width: f64, seed: u64) -> Out {
    let m = separation / 2.0;
    let spec = MixtureSpec {
        classes: vec![
            ClassComponent { mean: vec![-m], var: 1.0, prior: 0.5 },
            ClassComponent { mean: vec![m], var: 1.0, prior: 0.5 },
        ],
        ood: OodDensity::UniformBox { low: vec![-half_width], high: vec![half_width] },
        pi_in,
        reject_cost,
        model: None,
    };
    spec.validate().map_err(|e| e.to_string())?;
    let span = half_width * 1.1;
    let xs: Vec<f64> =
        (0..EXPLORER_POINTS).map(|i| -span + 2.0 * span * i as f64 / (EXPLORER_POINTS - 1) as f64).collect();
    let mut posterior_max = Vec::with_capacity(xs.len());
    for &x in &xs {
        let p = true_posterior(&spec, &[x]).map_err(|e| e.to_string())?;
        posterior_max.push(p.into_iter().fold(0.0, f64::max));
    }
    let log_density_ratio = xs.iter().map(|&x| spec.log_density_ratio(&[x])).collect();
    let mc = McConfig { n_mc: EXPLORER_MC, seed, shards: 1, threads: 1 };
    let chow = ThresholdRule::chow(&spec);
    let density = ThresholdRule::density_ratio(&spec);
    let err = |e: fpkit::FpError| e.to_string();
    to_json(&Explorer {
        xs,
        posterior_max,
        log_density_ratio,
        chow_threshold: spec.chow_threshold(),
        log_ood_threshold: spec.ood_threshold().ln(),
        chow_region: chow_reject_region(&spec).map_err(err)?,
        ood_region: ood_reject_region(&spec).map_err(err)?,
        fp_risk_chow: fp_risk(&spec, &chow, &mc).map_err(err)?,
        ood_risk_density_rule: ood_risk(&spec, &density, &mc).map_err(err)?,
        ood_risk_chow: ood_risk(&spec, &chow, &mc).map_err(err)?,
        witness: misalignment_witness(&spec, 0.99, 10.0).map_err(err)?,
    })
}

#[derive(Serialize)]
struct CsvReport {
    n: usize,
    classes: usize,
    reports: Vec<MetricsReport>,
    rc_curve: Vec<[f64; 2]>,
}

pub const CSV_SCORES: [ScoreKind; 6] = [
    ScoreKind::Msp,
    ScoreKind::NegEntropy,
    ScoreKind::Margin,
    ScoreKind::MaxLogit,
    ScoreKind::Energy,
    ScoreKind::OdinT,
];

/// Metrics for every logit-only score plus the MSP risk-coverage curve of a
/// pasted `l0,...,label` CSV.
pub fn evaluate_csv_json(text: &str) -> Out {
    let eval = read_eval_csv(text.as_bytes()).map_err(|e| e.to_string())?;
    let opts = ReportOptions { params: ScoreParams::default(), ece_bins: DEFAULT_ECE_BINS };
    let reports = CSV_SCORES
        .iter()
        .map(|&k| full_report(&eval, k, &opts))
        .collect::<fpkit::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let msp = fpkit::evalcore::score_msp(&eval);
    let correct = eval.correctness();
    let curve = rc_curve(&msp.values, &correct.correct).map_err(|e| e.to_string())?;
    to_json(&CsvReport {
        n: eval.len(),
        classes: eval.num_classes(),
        reports,
        rc_curve: curve.coverage.iter().zip(&curve.risk).map(|(&c, &r)| [c, r]).collect(),
    })
}

pub const GRID_SIDE: usize = 48;
pub const MAX_EPOCHS: usize = 300;

#[derive(Serialize)]
struct TrainDemo {
    method: &'static str,
    history: Vec<EpochRecord>,
    test_acc: f64,
    test_auroc: Option<f64>,
    /// Training inputs and (noisy) labels, for the scatter plot.
    train_x: Vec<f64>,
    train_labels: Vec<usize>,
    /// Row-major MSP of the output model on a `GRID_SIDE²` grid spanning `bounds`.
    grid_msp: Vec<f64>,
    grid_class: Vec<usize>,
    bounds: [f64; 4],
}

/// Trains the two-moons MLP with `method` (sgd, sam, swa or fmfp).
pub fn train_moons_json(method: &str, epochs: usize, label_noise: f64, seed: u64) -> Out {
    let method: TrainMethod = method.parse().map_err(|e: fpkit::FpError| e.to_string())?;
    if epochs == 0 || epochs > MAX_EPOCHS {
        return Err(format!("epochs must lie in [1, {MAX_EPOCHS}]"));
    }
    let splits = make_splits(&SplitSpec {
        kind: DatasetKind::TwoMoons,
        n_train: 300,
        n_test: 600,
        noise: SplitSpec::default_noise(DatasetKind::TwoMoons),
        label_noise,
        n_outliers: 0,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let config = TrainConfig { method, epochs, seed, ..TrainConfig::default() };
    let data = TrainData { train: &splits.train, test: &splits.test, outliers: None };
    let result = train(&config, &data).map_err(|e| e.to_string())?;
    let model = result.output_model();
    let (test_acc, test_auroc) = evaluate_model(model, &splits.test);

    let bounds = [-1.6, 2.6, -1.1, 1.6];
    let mut grid = Vec::with_capacity(GRID_SIDE * GRID_SIDE * 2);
    for r in 0..GRID_SIDE {
        let y = bounds[3] - (bounds[3] - bounds[2]) * (r as f64 + 0.5) / GRID_SIDE as f64;
        for c in 0..GRID_SIDE {
            grid.push(bounds[0] + (bounds[1] - bounds[0]) * (c as f64 + 0.5) / GRID_SIDE as f64);
            grid.push(y);
        }
    }
    let logits = model.logits(&grid, GRID_SIDE * GRID_SIDE);
    let k = model.num_classes();
    let mut grid_msp = Vec::with_capacity(GRID_SIDE * GRID_SIDE);
    let mut grid_class = Vec::with_capacity(GRID_SIDE * GRID_SIDE);
    for row in logits.chunks_exact(k) {
        let p = fpkit::evalcore::softmax(row).map_err(|e| e.to_string())?;
        grid_msp.push(p.iter().copied().fold(0.0, f64::max));
        grid_class.push(fpkit::evalcore::argmax(row));
    }
    to_json(&TrainDemo {
        method: method.as_str(),
        history: result.history,
        test_acc,
        test_auroc,
        train_x: splits.train.x,
        train_labels: splits.train.labels,
        grid_msp,
        grid_class,
        bounds,
    })
}

fn js(result: Out) -> Result<String, JsError> {
    result.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = exploreRegions)]
pub fn explore_regions(separation: f64, reject_cost: f64, pi_in: f64, half_width: f64, seed: u32) -> Result<String, JsError> {
    js(explore_regions_json(separation, reject_cost, pi_in, half_width, u64::from(seed)))
}

#[wasm_bindgen(js_name = evaluateCsv)]
pub fn evaluate_csv(text: &str) -> Result<String, JsError> {
    js(evaluate_csv_json(text))
}

#[wasm_bindgen(js_name = trainMoons)]
pub fn train_moons(method: &str, epochs: u32, label_noise: f64, seed: u32) -> Result<String, JsError> {
    js(train_moons_json(method, epochs as usize, label_noise, u64::from(seed)))
}
