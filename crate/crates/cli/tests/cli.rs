use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use ipm_tmle::demography::evaluate_target;
use ipm_tmle::{Dataset, SimSpec, TargetKind};
use ipm_tmle_cli::analyze::analyze_dataset;
use ipm_tmle_cli::config::AnalyzeConfig;
use ipm_tmle_cli::{simulate, ExperimentConfig, Overrides};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ipm-tmle"));
    c.env_remove("IPM_TMLE_OUT").env_remove("IPM_TMLE_THREADS");
    c
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{"simulation": {"design": "basic", "n": 300, "n_classes": 20, "seed": 11},
    "bandwidths": [0.05, 0.1], "n_replications": 6}"#;

fn table(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| headers.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

#[test]
fn summary_is_reproduced_from_the_estimates_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.json", SMALL);
    let o = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let truth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    let truth = truth["truth"].as_f64().unwrap();
    let estimates = table(&out.join("estimates.csv"));
    let summary = table(&out.join("summary.csv"));
    assert_eq!(summary.len(), 2 * 6);

    for s in &summary {
        let k: usize = match s["method"].as_str() {
            "initial" => 0,
            m => m.strip_prefix("tmle-iter-").unwrap().parse().unwrap(),
        };
        // iterate in force at k for every replication of this bandwidth
        let mut by_rep: BTreeMap<u64, (usize, f64, f64, f64)> = BTreeMap::new();
        for e in estimates.iter().filter(|e| e["bandwidth"] == s["bandwidth"]) {
            let it: usize = e["iteration"].parse().unwrap();
            if it > k {
                continue;
            }
            let rep: u64 = e["rep"].parse().unwrap();
            let entry = (it, num(e, "estimate"), num(e, "ci_low"), num(e, "ci_high"));
            let slot = by_rep.entry(rep).or_insert(entry);
            if it >= slot.0 {
                *slot = entry;
            }
        }
        let vals: Vec<(f64, bool)> = by_rep.values().map(|&(_, x, lo, hi)| (x, lo <= truth && truth <= hi)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / n).sqrt();
        let rmse = (vals.iter().map(|v| (v.0 - truth).powi(2)).sum::<f64>() / n).sqrt();
        let coverage = vals.iter().filter(|v| v.1).count() as f64 / n;
        assert_eq!(s["n_reps"], "6");
        assert_eq!(num(s, "coverage"), coverage);
        assert_eq!(num(s, "mean_estimate"), mean);
        assert_eq!(num(s, "bias"), mean - truth);
        assert_eq!(num(s, "sd"), sd);
        assert_eq!(num(s, "rmse"), rmse);
        assert!((rmse.powi(2) - (mean - truth).powi(2) - sd.powi(2)).abs() < 1e-9);
    }
    for e in &estimates {
        let covered = num(e, "ci_low") <= truth && truth <= num(e, "ci_high");
        assert_eq!(e["covered"], covered.to_string());
    }
    assert!(out.join("histogram.csv").exists());
    assert!(out.join("heatmaps/gm_truth.csv").exists());
    assert!(out.join("heatmaps/bw_0.1/eif_initial.csv").exists());
}

#[test]
fn infinite_tolerance_writes_only_the_plug_in() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: ExperimentConfig = serde_json::from_str(SMALL).unwrap();
    cfg.n_replications = 1;
    cfg.epsilon_tol = f64::INFINITY;
    let ov = Overrides { out: Some(dir.path().to_path_buf()), ..Default::default() };
    let exp = cfg.resolve(dir.path(), &ov).unwrap();
    let report = simulate::run(&exp).unwrap();
    assert!(report.estimates.iter().all(|r| r.iteration == 0));
    assert_eq!(report.estimates.len(), 2);

    let (_, res) = simulate::run_replication(&exp, 0).into_iter().find(|(l, _)| l == "0.1").unwrap();
    let state = res.unwrap();
    let plug: Vec<f64> =
        state.initial_models.iter().flatten().map(|m| evaluate_target(TargetKind::Lambda, m).unwrap()).collect();
    let avg = plug.iter().sum::<f64>() / plug.len() as f64;
    let row = report.estimates.iter().find(|r| r.bandwidth == "0.1").unwrap();
    assert!((row.estimate - avg).abs() < 1e-12);

    let maps = dir.path().join("heatmaps/bw_0.1");
    assert!(maps.join("gm_initial.csv").exists());
    assert!(!maps.join("gm_tmle.csv").exists());
    assert!(!maps.join("eif_tmle.csv").exists());
}

#[test]
fn analyzing_rotifer_data_with_its_empirical_law_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "rotifer.json", r#"{"design": "rotifer_like", "n": 5000, "seed": 3}"#);
    let o = bin().args(["gen-data", "--config"]).arg(&spec).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write(
        dir.path(),
        "analyze.json",
        r#"{"input": "data.csv",
            "schema": {"z_t": "z_class", "z_next": "z_next_class", "discrete_classes": 64},
            "initial_model": "empirical",
            "tmle": {"target": "lambda", "cross_fit": false, "n_folds": 1}}"#,
    );
    let o = bin().args(["analyze", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("report")).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("report/report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let initial = report["initial"]["estimate"].as_f64().unwrap();
    let tmle = report["tmle"]["estimate"].as_f64().unwrap();
    assert!((tmle - initial).abs() < 1e-6 * initial.abs(), "{initial} -> {tmle}");
    assert_eq!(report["n_classes"], 64);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("converged   true"), "{stdout}");
}

#[test]
fn an_unobserved_source_class_is_reported() {
    let data = SimSpec::basic(400, 12, 8).generate(0).unwrap();
    let kept: Vec<_> = data.records.iter().filter(|r| r.z_class != 5).cloned().collect();
    let data = Dataset::new(kept, data.grid.clone(), Vec::new(), Vec::new()).unwrap();
    let cfg: AnalyzeConfig = serde_json::from_str(r#"{"fit": {"env_effects": false}}"#).unwrap();
    let report = analyze_dataset(&data, &cfg).unwrap();
    assert!(report.warnings.iter().any(|w| w.contains("positivity") && w.contains("[5]")), "{:?}", report.warnings);
}

#[test]
fn stochastic_growth_without_environments_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "basic.json", r#"{"design": "basic", "n": 200, "n_classes": 10, "seed": 1}"#);
    let o = bin().args(["gen-data", "--config"]).arg(&spec).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 0);
    let cfg = write(dir.path(), "a.json", r#"{"input": "data.csv", "schema": {"n_classes": 10}, "tmle": {"target": "log_lambda_s"}}"#);
    let o = bin().args(["analyze", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("environment column required"));
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin().output().unwrap()), 1);
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().args(["simulate"]).output().unwrap()), 1);
    assert_eq!(code(&bin().args(["simulate", "--config", "/nonexistent/x.json"]).output().unwrap()), 1);
    assert_eq!(code(&bin().args(["simulate", "--threads", "many"]).output().unwrap()), 1);

    let cfg = write(dir.path(), "exp.json", SMALL);
    let o = bin().args(["simulate", "--config"]).arg(&cfg).env("IPM_TMLE_THREADS", "x").output().unwrap();
    assert_eq!(code(&o), 1);

    let unknown = write(dir.path(), "bad.json", r#"{"simulation": {"design": "basic", "n": 10}, "n_replications": 1, "colour": 3}"#);
    assert_eq!(code(&bin().args(["simulate", "--config"]).arg(&unknown).output().unwrap()), 1);

    write(dir.path(), "garbage.csv", "id,z_t,s,z_next\n1,0.5,maybe,0.6\n");
    let acfg = write(dir.path(), "an.json", r#"{"input": "garbage.csv"}"#);
    let o = bin().args(["analyze", "--config"]).arg(&acfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 2);

    let strict = write(dir.path(), "oracle.json", r#"{"instances": 2, "class_counts": [2], "targets": ["lambda"], "tol_lambda": 0.0}"#);
    let o = bin().args(["oracle-check", "--config"]).arg(&strict).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 3);
    assert!(dir.path().join("oracle.csv").exists());
}

#[test]
fn mass_failures_are_numeric_after_writing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.json",
        r#"{"simulation": {"design": "rotifer_like", "n": 500, "seed": 2},
            "initial_model": "empirical", "target": "log_lambda_s", "n_replications": 2}"#,
    );
    let out = dir.path().join("out");
    let o = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let failures = table(&out.join("failures.csv"));
    assert_eq!(failures.len(), 2);
    assert!(failures[0]["reason"].contains("environment column required"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "oracle.json", r#"{"instances": 3, "class_counts": [2], "targets": ["lambda"]}"#);
    let out = dir.path().join("from-env");
    let o = bin().args(["oracle-check", "--config"]).arg(&cfg).env("IPM_TMLE_OUT", &out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("oracle.csv").exists());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("lambda") && stdout.contains("ok"));
}

#[test]
fn shipped_configs_load_and_frozen_truth_is_current() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["basic_lambda.json", "elasticity.json", "rotifer_default.json", "idaho_log_lambda_s.json"] {
        ExperimentConfig::load(&dir.join(name), &Overrides::default()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let spec = SimSpec::from_path(&dir.join("idaho_like_default.json")).unwrap();
    let frozen = spec.truth["log_lambda_s"];
    let recomputed = spec.compute_truth(TargetKind::LogLambdaS).unwrap();
    assert!((frozen - recomputed).abs() < 1e-12, "{frozen} vs {recomputed}");
    assert!(spec.generate(0).unwrap().has_env());
}
