use fpkit::calibration::calibrated_eval;
use fpkit::evalcore::write_eval_csv;
use serde_json::Value;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fpkit");

fn manifest_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn fixture(name: &str) -> String {
    manifest_path(&format!("tests/fixtures/{name}")).to_string_lossy().into_owned()
}

fn fpkit(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("FPKIT_THREADS", "2").output().expect("binary runs")
}

fn ok_stdout(args: &[&str]) -> Vec<u8> {
    let out = fpkit(args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("stdout is JSON")
}

fn assert_schema(schema_file: &str, instance: &Value) {
    let text = fs::read_to_string(manifest_path(&format!("schemas/{schema_file}"))).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_file}: {errors:?}");
}

fn check_golden(name: &str, bytes: &[u8]) {
    let path = manifest_path(&format!("tests/golden/{name}"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, bytes).unwrap();
        return;
    }
    let expected = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == bytes, "{name} differs from the golden file");
}

fn write_calibrated(dir: &Path, n: usize, temperature: f64) -> String {
    let (eval, _) = calibrated_eval(n, 4, temperature, 2024).unwrap();
    let path = dir.join("calibrated.csv");
    write_eval_csv(&eval, BufWriter::new(File::create(&path).unwrap())).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn evaluate_two_scores_gives_two_reports() {
    let v = json(&ok_stdout(&["evaluate", "-i", &fixture("four.csv"), "--scores", "msp,energy"]));
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["score_kind"], "msp");
    assert_eq!(reports[1]["score_kind"], "energy");
    assert!(reports[1]["ece"].is_null());
    assert_schema("evaluate.schema.json", &v);
}

#[test]
fn x1000_scales_aurc_exactly() {
    let input = fixture("four.csv");
    let plain = json(&ok_stdout(&["evaluate", "-i", &input, "--scores", "msp,margin"]));
    let scaled = json(&ok_stdout(&["evaluate", "-i", &input, "--scores", "msp,margin", "--x1000"]));
    assert_eq!(scaled["aurc_scale"], 1000.0);
    for (p, s) in plain["reports"].as_array().unwrap().iter().zip(scaled["reports"].as_array().unwrap()) {
        for field in ["aurc", "e_aurc"] {
            assert_eq!(s[field].as_f64().unwrap(), 1000.0 * p[field].as_f64().unwrap());
        }
        assert_eq!(s["auroc"], p["auroc"]);
    }
}

#[test]
fn missing_file_exits_2() {
    let out = fpkit(&["evaluate", "-i", "/nonexistent/logits.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "l0,l1,label\n1,2,0\n0.5,oops,1\n").unwrap();
    let out = fpkit(&["evaluate", "-i", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = fpkit(&["evaluate", "-i", &fixture("four.csv"), "--colour"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn resolved_config_goes_to_stderr() {
    let out = fpkit(&["rc-curve", "-i", &fixture("four.csv")]);
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config:") && err.contains("\"odin_temperature\":1000.0"), "{err}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("coverage,risk\n"));
    assert!(!text.contains('\u{1b}'));
}

#[test]
fn single_class_labels_give_null_ranking_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("all_right.csv");
    fs::write(&path, "l0,l1,label\n2,0,0\n0,3,1\n").unwrap();
    let v = json(&ok_stdout(&["evaluate", "-i", path.to_str().unwrap()]));
    assert!(v["reports"][0]["auroc"].is_null());
    assert!(v["reports"][0]["nulls"]["auroc"].is_string());
    assert_schema("evaluate.schema.json", &v);
}

#[test]
fn fit_temperature_on_calibrated_data_is_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_calibrated(dir.path(), 20_000, 1.0);
    let scaled = dir.path().join("scaled.csv");
    let v = json(&ok_stdout(&["fit-temperature", "-i", &input, "--output-logits", scaled.to_str().unwrap()]));
    let t = v["temperature"].as_f64().unwrap();
    assert!((0.95..=1.05).contains(&t), "T = {t}");
    assert!(v["nll_after"].as_f64().unwrap() <= v["nll_before"].as_f64().unwrap());
    assert!(fs::read_to_string(scaled).unwrap().starts_with("l0,l1,l2,l3,label\n"));
    assert_schema("fit_temperature.schema.json", &v);
}

#[test]
fn decompose_outputs_validate() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_calibrated(dir.path(), 2_000, 1.0);
    for rule in ["log_loss", "brier"] {
        let v = json(&ok_stdout(&["decompose", "-i", &input, "--rule", rule]));
        assert_eq!(v["rule"], rule);
        assert_schema("decompose.schema.json", &v);
    }
    let out = fpkit(&["decompose", "-i", &input, "--rule", "focal"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_sweep_header() {
    let text = String::from_utf8(ok_stdout(&[
        "simulate", "--spec", &fixture("gmm.json"), "--sweep", "--n-mc", "2000", "--grid", "0.5:1:6",
    ]))
    .unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("delta,fp_risk,fp_stderr,ood_risk,ood_stderr"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn simulate_summaries_validate() {
    for spec in ["gmm.json", "gmm2d.json"] {
        let v = json(&ok_stdout(&["simulate", "--spec", &fixture(spec), "--n-mc", "5000"]));
        assert_schema("simulate.schema.json", &v);
    }
    let v = json(&ok_stdout(&["simulate", "--spec", &fixture("gmm.json"), "--n-mc", "5000"]));
    assert!((v["chow_threshold"].as_f64().unwrap() - 0.8).abs() < 1e-15);
    assert!(v["witness"]["posterior_max"].as_f64().unwrap() > 0.99);
}

#[test]
fn simulate_model_score_needs_a_model() {
    let out = fpkit(&["simulate", "--spec", &fixture("gmm.json"), "--sweep", "--score", "msp_of_model", "--n-mc", "100"]);
    assert_eq!(out.status.code(), Some(2));
    ok_stdout(&["simulate", "--spec", &fixture("gmm2d.json"), "--sweep", "--score", "msp_of_model", "--n-mc", "100"]);
}

#[test]
fn simulate_output_ignores_thread_count() {
    let args = ["simulate", "--spec", &fixture("gmm2d.json"), "--n-mc", "4000", "--seed", "3"];
    let one = Command::new(BIN).args(args).env("FPKIT_THREADS", "1").output().unwrap();
    let many = Command::new(BIN).args(args).env("FPKIT_THREADS", "8").output().unwrap();
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn train_twice_gives_identical_history() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let stdout = ok_stdout(&[
            "train", "--method", "fmfp", "--dataset", "two_moons", "--seed", "7", "--out-dir", out_dir.to_str().unwrap(),
        ]);
        (stdout, fs::read(out_dir.join("history.csv")).unwrap(), fs::read(out_dir.join("eval.csv")).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let history = String::from_utf8(a.0).unwrap();
    assert!(history.starts_with("epoch,train_loss,test_acc,test_auroc\n"));
    assert_eq!(history.lines().count(), 201);
}

#[test]
fn train_outputs_feed_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok_stdout(&[
        "train", "--dataset", "gaussian_blobs", "--epochs", "5", "--n-train", "150", "--n-test", "90", "--n-outliers",
        "60", "--loss", "ce_plus_oe:0.5", "--out-dir", d.to_str().unwrap(),
    ]);
    let p = |f: &str| d.join(f).to_string_lossy().into_owned();
    let v = json(&ok_stdout(&[
        "evaluate", "-i", &p("eval.csv"), "--scores", "all", "--features", &p("features.csv"), "--head",
        &p("head.json"), "--ood", &p("ood_eval.csv"), "--ood-features", &p("ood_features.csv"),
    ]));
    assert_eq!(v["reports"].as_array().unwrap().len(), 7);
    assert_eq!(v["ood_reports"].as_array().unwrap().len(), 7);
    assert_eq!(v["ood_reports"][0]["n_out"], 60);
    assert_schema("evaluate.schema.json", &v);
}

#[test]
fn diverged_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpkit(&["train", "--epochs", "20", "--lr", "1e6", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn golden_evaluate() {
    let args = ["evaluate", "-i", &fixture("four.csv"), "--scores", "msp,neg_entropy,margin,max_logit,energy,odin_t"];
    let first = ok_stdout(&args);
    assert_eq!(first, ok_stdout(&args));
    check_golden("evaluate.json", &first);
}

#[test]
fn golden_train() {
    let dir = tempfile::tempdir().unwrap();
    let args = |sub: &str| {
        vec![
            "train".to_string(), "--method".into(), "fmfp".into(), "--epochs".into(), "12".into(), "--swa-start".into(),
            "6".into(), "--swa-cycle".into(), "2".into(), "--n-train".into(), "120".into(), "--n-test".into(),
            "80".into(), "--label-noise".into(), "0.1".into(), "--seed".into(), "7".into(), "--out-dir".into(),
            dir.path().join(sub).to_string_lossy().into_owned(),
        ]
    };
    let a: Vec<String> = args("a");
    let b: Vec<String> = args("b");
    let first = ok_stdout(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let second = ok_stdout(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(first, second);
    check_golden("train_history.csv", &first);
    let eval = fs::read(dir.path().join("a/eval.csv")).unwrap();
    assert_eq!(eval, fs::read(dir.path().join("b/eval.csv")).unwrap());
    check_golden("train_eval.csv", &eval);
}

#[test]
fn golden_simulate() {
    let summary = ["simulate", "--spec", &fixture("gmm.json"), "--n-mc", "20000", "--seed", "5"];
    let first = ok_stdout(&summary);
    assert_eq!(first, ok_stdout(&summary));
    check_golden("simulate.json", &first);
    let sweep = ["simulate", "--spec", &fixture("gmm.json"), "--sweep", "--n-mc", "20000", "--seed", "5"];
    let first = ok_stdout(&sweep);
    assert_eq!(first, ok_stdout(&sweep));
    check_golden("simulate_sweep.csv", &first);
}
