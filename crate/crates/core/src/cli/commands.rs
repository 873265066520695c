use super::{
    thread_budget, DecomposeArgs, EvaluateArgs, FitTemperatureArgs, RcCurveArgs, ScoreArgs, SimulateArgs, TrainArgs,
};
use crate::bayeslab::{
    chow_reject_region, fp_risk, linear_grid, misalignment_witness, ood_reject_region, ood_risk, sweep_thresholds,
    write_sweep_csv, McConfig, MisalignmentWitness, MixtureSpec, RejectRegion, RiskEstimate, ScoreId, ThresholdRule,
};
use crate::calibration::{apply_temperature, decompose_score, fit_temperature, ScoringRule};
use crate::error::{FpError, Result};
use crate::evalcore::{
    compute_score, react_threshold, read_eval_csv, read_features_csv, read_head_json, read_posterior_csv,
    score_react_with_threshold, write_eval_csv, write_matrix_csv, EvalSet, ScoreKind, ScoreParams,
};
use crate::flatopt::{
    make_splits, train, DatasetKind, LossSpec, SplitSpec, TrainConfig, TrainData, TrainMethod,
};
use crate::metrics::{full_report, ood_report, rc_curve, MetricsReport, OodReport, ReportOptions};
use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

fn io_err(path: &Path, e: std::io::Error) -> FpError {
    FpError::Io(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        FpError::Parse { line, message } => FpError::Parse { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

fn log_config(stderr: &mut dyn Write, command: &str, config: &serde_json::Value) -> Result<()> {
    writeln!(stderr, "fpkit {command} config: {config}")?;
    Ok(())
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| FpError::invalid_input(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn load_eval(path: &Path, features: Option<&Path>, head: Option<&Path>) -> Result<EvalSet> {
    let eval = with_path(path, read_eval_csv(open(path)?))?;
    match (features, head) {
        (Some(f), Some(h)) => {
            let feats = with_path(f, read_features_csv(open(f)?))?;
            let head = with_path(h, read_head_json(open(h)?))?;
            eval.with_model_access(feats, head)
        }
        (None, None) => Ok(eval),
        _ => Err(FpError::invalid_input("--features and --head must be given together")),
    }
}

fn parse_kinds(list: &str) -> Result<Vec<ScoreKind>> {
    if list.trim() == "all" {
        return Ok(ScoreKind::ALL.to_vec());
    }
    let mut kinds = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k: ScoreKind = item.parse()?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(FpError::invalid_param("no score kinds requested"));
    }
    Ok(kinds)
}

fn score_params(a: &ScoreArgs) -> ScoreParams {
    ScoreParams { energy_temperature: a.energy_t, odin_temperature: a.odin_t, react_percentile: a.react_percentile }
}

/// Applies `f` to every item on up to `threads` workers; output keeps the
/// input order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Serialize)]
struct EvaluateOutput {
    log_base: &'static str,
    aurc_scale: f64,
    reports: Vec<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ood_reports: Option<Vec<OodReport>>,
}

pub fn evaluate_cmd(a: &EvaluateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let mut kinds = parse_kinds(&a.scores)?;
    if a.scores.trim() == "all" && (a.score.features.is_none() || a.score.head.is_none()) {
        kinds.retain(|k| *k != ScoreKind::ReactMsp);
    }
    let params = score_params(&a.score);
    let opts = ReportOptions { params, ece_bins: a.bins };
    let threads = thread_budget();
    log_config(
        stderr,
        "evaluate",
        &json!({
            "input": a.input, "scores": kinds, "x1000": a.x1000, "bins": a.bins, "params": params,
            "features": a.score.features, "head": a.score.head, "ood": a.ood, "ood_features": a.ood_features,
            "log_base": "e", "threads": threads,
        }),
    )?;
    if a.bins == 0 {
        return Err(FpError::invalid_param("--bins must be >= 1"));
    }
    let eval = load_eval(&a.input, a.score.features.as_deref(), a.score.head.as_deref())?;
    let reports = par_map(&kinds, threads, |&k| full_report(&eval, k, &opts))
        .into_iter()
        .map(|r| r.map(|rep| if a.x1000 { rep.scaled_x1000() } else { rep }))
        .collect::<Result<Vec<_>>>()?;

    let ood_reports = match &a.ood {
        None => None,
        Some(path) => {
            let ood_feats = a.ood_features.as_deref();
            let eval_out = load_eval(path, ood_feats, ood_feats.and(a.score.head.as_deref()))?;
            let pair = |k: &ScoreKind| -> Result<OodReport> {
                let (s_in, s_out) = if *k == ScoreKind::ReactMsp {
                    let feats = eval
                        .features()
                        .ok_or_else(|| FpError::MissingModelAccess("ReAct needs --features and --head".into()))?;
                    let t = react_threshold(&feats.values, params.react_percentile)?;
                    (score_react_with_threshold(&eval, t)?, score_react_with_threshold(&eval_out, t)?)
                } else {
                    (compute_score(&eval, *k, &params)?, compute_score(&eval_out, *k, &params)?)
                };
                ood_report(*k, &s_in.values, &s_out.values)
            };
            Some(par_map(&kinds, threads, pair).into_iter().collect::<Result<Vec<_>>>()?)
        }
    };
    let out = EvaluateOutput { log_base: "e", aurc_scale: if a.x1000 { 1000.0 } else { 1.0 }, reports, ood_reports };
    write_json(stdout, &out)
}

pub fn rc_curve_cmd(a: &RcCurveArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let kind: ScoreKind = a.score_kind.parse()?;
    let params = score_params(&a.score);
    log_config(
        stderr,
        "rc-curve",
        &json!({ "input": a.input, "score_kind": kind, "params": params, "features": a.score.features, "head": a.score.head }),
    )?;
    let eval = load_eval(&a.input, a.score.features.as_deref(), a.score.head.as_deref())?;
    let score = compute_score(&eval, kind, &params)?;
    let curve = rc_curve(&score.values, &eval.correctness().correct)?;
    curve.write_csv(stdout)
}

pub fn fit_temperature_cmd(a: &FitTemperatureArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    log_config(stderr, "fit-temperature", &json!({ "input": a.input, "output_logits": a.output_logits, "search": "golden-section on ln T over [0.05, 100], tol 1e-4" }))?;
    let eval = with_path(&a.input, read_eval_csv(open(&a.input)?))?;
    let fit = fit_temperature(&eval)?;
    if let Some(w) = &fit.warning {
        writeln!(stderr, "warning: {w}")?;
    }
    if let Some(path) = &a.output_logits {
        let scaled = apply_temperature(&eval, fit.temperature)?;
        let mut f = create(path)?;
        write_eval_csv(&scaled, &mut f)?;
        f.flush()?;
    }
    write_json(stdout, &fit)
}

pub fn decompose_cmd(a: &DecomposeArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let rule: ScoringRule = a.rule.parse()?;
    log_config(stderr, "decompose", &json!({ "input": a.input, "rule": rule, "bins": a.bins, "posterior": a.posterior }))?;
    let eval = with_path(&a.input, read_eval_csv(open(&a.input)?))?;
    let q = match &a.posterior {
        Some(path) => {
            let (values, k) = with_path(path, read_posterior_csv(open(path)?))?;
            if k != eval.num_classes() {
                return Err(FpError::invalid_input(format!(
                    "posterior has {k} columns, logits have {}",
                    eval.num_classes()
                )));
            }
            Some(values)
        }
        None => None,
    };
    let est = decompose_score(&eval, rule, a.bins, q.as_deref())?;
    write_json(stdout, &est)
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| FpError::invalid_param(format!("bad hidden width `{w}`")))
        })
        .collect()
}

pub fn train_cmd(a: &TrainArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let method: TrainMethod = a.method.parse()?;
    let loss: LossSpec = a.loss.parse()?;
    let kind: DatasetKind = a.dataset.parse()?;
    let mut sizes = vec![2];
    sizes.extend(parse_hidden(&a.hidden)?);
    sizes.push(kind.num_classes());
    let split = SplitSpec {
        kind,
        n_train: a.n_train,
        n_test: a.n_test,
        noise: a.noise.unwrap_or_else(|| SplitSpec::default_noise(kind)),
        label_noise: a.label_noise,
        n_outliers: a.n_outliers,
        seed: a.seed,
    };
    let config = TrainConfig {
        method,
        loss,
        mixup_alpha: a.mixup_alpha,
        epochs: a.epochs,
        batch_size: a.batch_size,
        base_lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        sam_rho: a.sam_rho,
        swa_start: a.swa_start,
        swa_cycle: a.swa_cycle,
        cyclic_lr: !a.constant_lr,
        sizes,
        seed: a.seed,
    };
    let resolved = TrainConfig {
        sam_rho: Some(config.rho()),
        swa_start: method.uses_swa().then(|| config.swa_start_epoch()),
        ..config.clone()
    };
    log_config(stderr, "train", &json!({ "train": resolved, "data": split, "out_dir": a.out_dir }))?;
    config.validate()?;
    if split.n_train == 0 || split.n_test == 0 {
        return Err(FpError::invalid_param("--n-train and --n-test must be >= 1"));
    }
    let splits = make_splits(&split)?;
    let data = TrainData { train: &splits.train, test: &splits.test, outliers: Some(&splits.outliers) };
    let result = train(&config, &data)?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let path = |name: &str| a.out_dir.join(name);
    let model = result.output_model();
    let save = |name: &str, write: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
        let p = path(name);
        let mut f = create(&p)?;
        write(&mut f)?;
        f.flush().map_err(|e| io_err(&p, e))
    };
    save("model.json", &|f| Ok(writeln!(f, "{}", model.to_json())?))?;
    let eval = model.eval_set(&splits.test.x, &splits.test.labels)?;
    save("eval.csv", &|f| write_eval_csv(&eval, f))?;
    if let (Some(feats), Some(head)) = (eval.features(), eval.head()) {
        save("features.csv", &|f| write_matrix_csv(&feats.values, feats.dim, 'f', f))?;
        save("head.json", &|f| Ok(writeln!(f, "{}", serde_json::to_string(head).expect("head serializes"))?))?;
    }
    if kind == DatasetKind::GaussianBlobs && !splits.ood_test.is_empty() {
        let ood = model.eval_set(&splits.ood_test.x, &splits.ood_test.labels)?;
        save("ood_eval.csv", &|f| write_eval_csv(&ood, f))?;
        if let Some(feats) = ood.features() {
            save("ood_features.csv", &|f| write_matrix_csv(&feats.values, feats.dim, 'f', f))?;
        }
    }
    save("history.csv", &|f| result.write_history_csv(f))?;
    result.write_history_csv(stdout)
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || FpError::invalid_param(format!("bad grid `{s}`; use lo:hi:n or a comma-separated list"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        return Ok(linear_grid(lo, hi, n));
    }
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}

/// Score range plus the Bayes threshold of the matching rule.
fn default_grid(spec: &MixtureSpec, score: ScoreId) -> Vec<f64> {
    let (mut grid, bayes) = match score {
        ScoreId::TruePosteriorMax | ScoreId::MspOfModel => {
            (linear_grid(1.0 / spec.num_classes() as f64, 1.0, 51), spec.chow_threshold())
        }
        ScoreId::DensityRatio => {
            let t = spec.ood_threshold();
            ((0..=30).map(|i| t * f64::from(i) / 10.0).collect(), t)
        }
    };
    grid.push(bayes);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[derive(Serialize)]
struct SimulateSummary {
    chow_threshold: f64,
    ood_threshold: f64,
    /// Interval endpoints of `null` are unbounded.
    chow_region: RejectRegion,
    ood_region: RejectRegion,
    fp_risk_chow: RiskEstimate,
    fp_risk_accept_all: RiskEstimate,
    ood_risk_density_rule: RiskEstimate,
    ood_risk_chow: RiskEstimate,
    witness: Option<MisalignmentWitness>,
}

pub fn simulate_cmd(a: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| io_err(&a.spec, e))?;
    let spec = with_path(&a.spec, MixtureSpec::from_json(&text))?;
    let score: ScoreId = a.score.parse()?;
    let mc = McConfig { n_mc: a.n_mc, seed: a.seed, shards: a.shards, threads: thread_budget() };
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(&spec, score),
    };
    log_config(
        stderr,
        "simulate",
        &json!({ "spec": spec, "sweep": a.sweep, "score": score, "grid": if a.sweep { Some(&grid) } else { None }, "mc": mc }),
    )?;
    if a.sweep {
        let rows = sweep_thresholds(&spec, score, &grid, &mc)?;
        return write_sweep_csv(&rows, stdout);
    }
    let chow = ThresholdRule::chow(&spec);
    let summary = SimulateSummary {
        chow_threshold: spec.chow_threshold(),
        ood_threshold: spec.ood_threshold(),
        chow_region: chow_reject_region(&spec)?,
        ood_region: ood_reject_region(&spec)?,
        fp_risk_chow: fp_risk(&spec, &chow, &mc)?,
        fp_risk_accept_all: fp_risk(&spec, &ThresholdRule::accept_all(ScoreId::TruePosteriorMax), &mc)?,
        ood_risk_density_rule: ood_risk(&spec, &ThresholdRule::density_ratio(&spec), &mc)?,
        ood_risk_chow: ood_risk(&spec, &chow, &mc)?,
        witness: misalignment_witness(&spec, 0.99, 10.0)?,
    };
    write_json(stdout, &summary)
}
