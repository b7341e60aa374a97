//! Acceptance suite. Every criterion prints one PASS or FAIL line (written to
//! stderr directly so it survives output capture); the test fails if any
//! criterion fails.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ipm_tmle::demography::{
    deflated_pinv, dominant_eigs, growth_elasticity, target_elasticity, target_lambda, target_log_lambda_s,
    BandwidthPolicy,
};
use ipm_tmle::influence::random_law;
use ipm_tmle::tmle::run_cv_tmle;
use ipm_tmle::{DemographicModel, EnvLaw, FitConfig, ModelSpec, SimSpec, TmleConfig};
use ipm_tmle_cli::config::OracleConfig;
use ipm_tmle_cli::simulate::{self, SimulateReport};
use ipm_tmle_cli::summary::{method_name, EstimateRow};
use ipm_tmle_cli::{oracle_check, ExperimentConfig, Overrides};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Ledger {
    lines: Vec<(String, bool)>,
}

impl Ledger {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        let line = format!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        let _ = writeln!(std::io::stderr(), "{line}");
        self.lines.push((line, pass));
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_experiment(name: &str, out: &Path) -> SimulateReport {
    let ov = Overrides { out: Some(out.to_path_buf()), ..Default::default() };
    let exp = ExperimentConfig::load(&configs().join(name), &ov).unwrap();
    simulate::run(&exp).unwrap()
}

fn summary_of<'a>(report: &'a SimulateReport, method: &str, bandwidth: &str) -> &'a ipm_tmle_cli::summary::SummaryRow {
    report.summary.iter().find(|r| r.method == method && r.bandwidth == bandwidth).unwrap()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

fn oracle_criteria(ledger: &mut Ledger) {
    let cfg = OracleConfig { seed: 7, ..Default::default() };
    let start = Instant::now();
    let rows = oracle_check::check(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rel_ok = rows.iter().all(|r| r.max_rel_error < cfg.tolerance(r.target));
    let worst = rows.iter().map(|r| r.max_rel_error / cfg.tolerance(r.target)).fold(0.0f64, f64::max);
    ledger.record(
        "1 closed-form influence vs finite-difference oracle",
        rel_ok && secs < 60.0,
        format!("{} target/N cells x {} instances, worst error/tolerance {worst:.2e}, {secs:.1}s", rows.len(), cfg.instances),
    );
    let mean = rows.iter().map(|r| r.max_abs_mean).fold(0.0f64, f64::max);
    ledger.record("2 influence functions have mean zero", mean < 1e-10, format!("max |E psi| {mean:.2e}"));
}

fn plug_in_bias(ledger: &mut Ledger) {
    let spec = SimSpec::basic(1000, 100, 4242);
    let fit = FitConfig {
        env_effects: false,
        separate_seedling_survival: false,
        bandwidth: BandwidthPolicy::Fixed(0.1),
        ..Default::default()
    };
    let cfg = TmleConfig { max_iterations: 50, seed: 17, ..Default::default() };
    let mut worst = 0.0f64;
    let mut all_converged = true;
    for rep in 0..5 {
        let data = spec.generate(rep).unwrap();
        let (_, state) = run_cv_tmle(&data, &ModelSpec::Parametric(fit.clone()), &cfg).unwrap();
        all_converged &= state.converged;
        let last = state.last();
        worst = worst
            .max(last.mean_psi_growth.abs() / last.sd_psi_growth)
            .max(last.mean_psi_fecundity.abs() / last.sd_psi_fecundity);
    }
    ledger.record(
        "3 targeting removes the plug-in bias",
        all_converged && worst < 1e-3,
        format!("5 datasets, n = 1000, converged {all_converged}, max |mean psi| / sd(psi) {worst:.2e}"),
    );
}

/// Final iterate per replication at one bandwidth, with the initial one.
fn first_and_last(rows: &[EstimateRow], bandwidth: &str) -> Vec<(f64, f64)> {
    let mut by_rep: BTreeMap<u64, Vec<&EstimateRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.bandwidth == bandwidth) {
        by_rep.entry(r.rep).or_default().push(r);
    }
    by_rep
        .values()
        .map(|v| {
            let first = v.iter().find(|r| r.iteration == 0).unwrap().estimate;
            let last = v.iter().max_by_key(|r| r.iteration).unwrap().estimate;
            (first, last)
        })
        .collect()
}

fn lambda_experiment(ledger: &mut Ledger, dir: &Path) {
    let start = Instant::now();
    let report = run_experiment("basic_lambda.json", &dir.join("lambda"));
    let secs = start.elapsed().as_secs_f64();
    let final_method = method_name(5);
    let bws = ["0.01", "0.1"];
    let coverages: Vec<f64> = bws.iter().map(|b| summary_of(&report, &final_method, b).coverage).collect();
    ledger.record(
        "4a lambda experiment coverage in [0.91, 0.99]",
        coverages.iter().all(|c| (0.91..=0.99).contains(c)),
        format!("coverage {coverages:?} at bandwidths {bws:?}, truth {:.6}, {secs:.0}s", report.truth),
    );
    let b0 = summary_of(&report, "initial", "0.1").bias;
    let b1 = summary_of(&report, &final_method, "0.1").bias;
    ledger.record(
        "4b lambda experiment halves the bias at bandwidth 0.1",
        b1.abs() <= 0.5 * b0.abs(),
        format!("initial bias {b0:.3e}, tmle bias {b1:.3e}"),
    );
    let spread = |m: &str| (summary_of(&report, m, "0.01").mean_estimate - summary_of(&report, m, "0.1").mean_estimate).abs();
    let (s0, s1) = (spread("initial"), spread(&final_method));
    ledger.record(
        "4c lambda estimates agree more across bandwidths after targeting",
        s1 < s0,
        format!("spread of mean estimates initial {s0:.3e}, tmle {s1:.3e}"),
    );
    let pairs = first_and_last(&report.estimates, "0.1");
    let closer = pairs.iter().filter(|(a, b)| (b - report.truth).abs() < (a - report.truth).abs()).count();
    let share = closer as f64 / pairs.len() as f64;
    ledger.record(
        "4d targeted estimate closer to the truth in at least 80% of replications",
        share >= 0.8,
        format!("{closer} of {} replications at bandwidth 0.1", pairs.len()),
    );
}

fn elasticity_experiment(ledger: &mut Ledger, dir: &Path) {
    let report = run_experiment("elasticity.json", &dir.join("elasticity"));
    let coverages: Vec<f64> = ["0.01", "0.1"].iter().map(|b| summary_of(&report, &method_name(5), b).coverage).collect();
    ledger.record(
        "5 elasticity experiment coverage in [0.88, 0.99]",
        coverages.iter().all(|c| (0.88..=0.99).contains(c)),
        format!("coverage {coverages:?}, truth {:.6}", report.truth),
    );
}

fn rotifer_no_op(ledger: &mut Ledger) {
    let exp = ExperimentConfig::load(&configs().join("rotifer_default.json"), &Overrides::default()).unwrap();
    let (mut eps, mut rel, mut failures) = (0.0f64, 0.0f64, 0);
    for rep in 0..exp.config.n_replications as u64 {
        for (_, res) in simulate::run_replication(&exp, rep) {
            let Ok(state) = res else {
                failures += 1;
                continue;
            };
            let (e1, e2) = state.epsilon_history[0];
            eps = eps.max(e1.abs()).max(e2.abs());
            let (a, b) = (state.initial().estimate, state.last().estimate);
            rel = rel.max((b - a).abs() / a.abs());
        }
    }
    ledger.record(
        "6 empirical rotifer fits are left unchanged",
        failures == 0 && eps < 1e-3 && rel < 1e-6,
        format!("{} replications, {failures} failures, max |eps| {eps:.2e}, max relative change {rel:.2e}", exp.config.n_replications),
    );
}

fn eigen_engine(ledger: &mut Ledger) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (a, b, c, d): (f64, f64, f64, f64) =
            (rng.random_range(0.0..2.0), rng.random_range(0.01..2.0), rng.random_range(0.01..2.0), rng.random_range(0.0..2.0));
        let root = ((a + d) + ((a - d).powi(2) + 4.0 * b * c).sqrt()) / 2.0;
        let lambda = dominant_eigs(&DMatrix::from_row_slice(2, 2, &[a, b, c, d])).unwrap().lambda;
        worst = worst.max((lambda - root).abs());
    }
    ledger.record("7a power iteration matches the 2x2 characteristic root", worst < 1e-10, format!("1000 matrices, max error {worst:.2e}"));

    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = 2 + k % 5;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        let lambda = dominant_eigs(&m).unwrap().lambda;
        let a = DMatrix::<f64>::identity(n, n) * lambda - &m;
        let p = deflated_pinv(lambda, &m);
        let ap = &a * &p;
        let pa = &p * &a;
        for err in [
            max_abs(&(&ap * &a - &a)),
            max_abs(&(&pa * &p - &p)),
            max_abs(&(&ap - ap.transpose())),
            max_abs(&(&pa - pa.transpose())),
        ] {
            worst = worst.max(err);
        }
    }
    ledger.record("7b deflated pseudoinverse satisfies the Moore-Penrose identities", worst < 1e-10, format!("100 matrices, max error {worst:.2e}"));
}

fn trivial_identities(ledger: &mut Ledger) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut no_survival, mut no_fecundity, mut log_s, mut partition) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        let n = 2 + k % 4;
        let model = random_law(&mut rng, n, 1).to_model(None);
        let law = &model.envs[0];

        let mut dead = law.trans.clone();
        dead.fill(0.0);
        dead.column_mut(0).fill(1.0);
        let m = DemographicModel::single(EnvLaw::new(dead, law.fecundity.clone(), law.marginal.clone()));
        no_survival = no_survival.max((target_elasticity(&m).unwrap() - 1.0).abs());

        let barren = DemographicModel::single(EnvLaw::new(law.trans.clone(), DMatrix::zeros(n, n), law.marginal.clone()));
        if dominant_eigs(&barren.kernel(None)).is_ok() {
            no_fecundity = no_fecundity.max(target_elasticity(&barren).unwrap().abs());
        }

        log_s = log_s.max((target_log_lambda_s(&model).unwrap() - target_lambda(&model).unwrap().ln()).abs());
        partition = partition.max((growth_elasticity(&model).unwrap() + target_elasticity(&model).unwrap() - 1.0).abs());
    }
    let pass = no_survival < 1e-10 && no_fecundity < 1e-10 && log_s < 1e-12 && partition < 1e-10;
    ledger.record(
        "8 trivial identities",
        pass,
        format!("|e - 1| no survival {no_survival:.1e}; |e| no fecundity {no_fecundity:.1e}; |log lambda_S - log lambda| {log_s:.1e}; partition {partition:.1e}"),
    );
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(ledger: &mut Ledger, dir: &Path) {
    let cfg = dir.join("small.json");
    std::fs::write(
        &cfg,
        r#"{"simulation": {"design": "basic", "n": 300, "n_classes": 20, "seed": 5},
            "bandwidths": [0.05, 0.1], "n_replications": 4}"#,
    )
    .unwrap();
    let run = |out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_ipm-tmle"))
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.join(out))
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        read_tree(&dir.join(out))
    };
    let (a, b) = (run("first"), run("second"));
    ledger.record("9 simulate output is byte-identical across runs", !a.is_empty() && a == b, format!("{} files compared", a.len()));
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut ledger = Ledger { lines: Vec::new() };
    oracle_criteria(&mut ledger);
    plug_in_bias(&mut ledger);
    lambda_experiment(&mut ledger, dir.path());
    elasticity_experiment(&mut ledger, dir.path());
    rotifer_no_op(&mut ledger);
    eigen_engine(&mut ledger);
    trivial_identities(&mut ledger);
    determinism(&mut ledger, dir.path());
    let failed: Vec<&str> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
