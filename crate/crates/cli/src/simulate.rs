//! Monte Carlo experiments: replications in parallel, one writer at the end.

use std::path::PathBuf;

use ipm_tmle::demography::{dominant_eigs, empirical_model, ComponentFits};
use ipm_tmle::influence::influence_tables;
use ipm_tmle::numeric::splitmix64;
use ipm_tmle::tmle::{fit_fold_models, fold_plan, run_tmle_with_models};
use ipm_tmle::{DemographicModel, IpmError, TargetKind, TmleState};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{prepare_output, BandwidthChoice, Experiment, InitialModel};
use crate::error::{CliError, CliResult};
use crate::output::{write_csv, write_json, write_matrix};
use crate::summary::{histograms, summarize, EstimateRow, SummaryRow};

/// Fold-assignment seed of a replication.
pub fn rep_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(seed ^ splitmix64(rep))
}

pub type RunResult = std::result::Result<TmleState, String>;

/// Every bandwidth column of one replication.
pub fn run_replication(exp: &Experiment, rep: u64) -> Vec<(String, RunResult)> {
    match run_replication_inner(exp, rep) {
        Ok(v) => v,
        Err(e) => exp.choices.iter().map(|c| (c.label.clone(), Err(e.to_string()))).collect(),
    }
}

fn run_replication_inner(exp: &Experiment, rep: u64) -> ipm_tmle::Result<Vec<(String, RunResult)>> {
    let data = exp.sim.generate(rep)?;
    let cfg = exp.tmle_config(rep_seed(exp.sim.seed, rep));
    if cfg.target == TargetKind::LogLambdaS && !data.has_env() {
        return Err(IpmError::EnvironmentRequired);
    }
    let (folds, training) = fold_plan(&data, &cfg);
    let mut warnings = Vec::new();
    let run = |models: Vec<Option<DemographicModel>>, warnings: Vec<String>| {
        run_tmle_with_models(&data, folds.clone(), models, &cfg, warnings).map(|(_, s)| s).map_err(|e| e.to_string())
    };
    match exp.config.initial_model {
        InitialModel::Empirical => {
            let models = fit_fold_models(&training, empirical_model, &mut warnings)?;
            Ok(vec![(exp.choices[0].label.clone(), run(models, warnings))])
        }
        InitialModel::Parametric => {
            let fits = fit_fold_models(&training, |d| ComponentFits::fit(d, &exp.config.fit), &mut warnings)?;
            Ok(exp
                .choices
                .iter()
                .map(|BandwidthChoice { label, policy }| {
                    let policy = policy.as_ref().expect("parametric columns carry a bandwidth");
                    let models = fits.iter().map(|f| f.as_ref().map(|f| f.model(f.select_bandwidth(policy)))).collect();
                    (label.clone(), run(models, warnings.clone()))
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct FailureRow {
    rep: u64,
    bandwidth: String,
    reason: String,
}

#[derive(Debug, Clone, Serialize)]
struct WarningRow {
    rep: u64,
    bandwidth: String,
    message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruthRecord {
    pub design: String,
    pub target: TargetKind,
    pub truth: f64,
    pub frozen: bool,
    pub n: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub n_replications: usize,
}

/// What a finished experiment produced.
#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub truth: f64,
    pub estimates: Vec<EstimateRow>,
    pub summary: Vec<SummaryRow>,
    pub n_runs: usize,
    pub n_failures: usize,
    pub output: PathBuf,
}

fn mean_matrix(ms: &[DMatrix<f64>]) -> Option<DMatrix<f64>> {
    let first = ms.first()?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for m in ms {
        acc += m;
    }
    Some(acc / ms.len() as f64)
}

fn growth_eif(kind: TargetKind, model: &DemographicModel) -> ipm_tmle::Result<DMatrix<f64>> {
    let eig = dominant_eigs(&model.kernel(None))?;
    Ok(influence_tables(kind, model, &eig)?.growth[0].clone())
}

/// Fold-averaged growth matrix and growth-space influence table (first
/// environment), with rows as destination and source respectively.
fn fold_heatmaps(kind: TargetKind, models: &[Option<DemographicModel>]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let present: Vec<&DemographicModel> = models.iter().flatten().collect();
    let gm: Vec<DMatrix<f64>> = present.iter().map(|m| m.growth_matrix(None)).collect();
    let eif: Vec<DMatrix<f64>> = present.iter().filter_map(|m| growth_eif(kind, m).ok()).collect();
    Some((mean_matrix(&gm)?, mean_matrix(&eif)?))
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

pub fn run(exp: &Experiment) -> CliResult<SimulateReport> {
    prepare_output(&exp.output)?;
    let kind = exp.config.target;
    let truth_model = exp.sim.truth_model()?;
    let truth = exp.sim.truth(kind)?;
    if !truth.is_finite() {
        return Err(CliError::Numeric(format!("true {} is not finite", kind.name())));
    }
    let reps = exp.config.n_replications as u64;
    let work = || (0..reps).into_par_iter().map(|rep| run_replication(exp, rep)).collect::<Vec<_>>();
    let results = match exp.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    for (rep, cols) in results.iter().enumerate() {
        let rep = rep as u64;
        for (label, res) in cols {
            match res {
                Ok(state) => {
                    for s in &state.iterations {
                        estimates.push(EstimateRow {
                            rep,
                            bandwidth: label.clone(),
                            iteration: s.iteration,
                            estimate: s.estimate,
                            se: s.std_error,
                            ci_low: s.ci_low,
                            ci_high: s.ci_high,
                            covered: s.ci_low <= truth && truth <= s.ci_high,
                            eps1: s.eps1,
                            eps2: s.eps2,
                        });
                    }
                    warnings.extend(state.warnings.iter().map(|m| WarningRow {
                        rep,
                        bandwidth: label.clone(),
                        message: m.clone(),
                    }));
                }
                Err(reason) => failures.push(FailureRow { rep, bandwidth: label.clone(), reason: reason.clone() }),
            }
        }
    }

    let labels: Vec<String> = exp.choices.iter().map(|c| c.label.clone()).collect();
    let k = exp.config.max_iterations;
    let summary = summarize(&estimates, &labels, k, truth);
    let out = &exp.output;
    write_csv(
        &out.join("estimates.csv"),
        &estimates,
        &["rep", "bandwidth", "iteration", "estimate", "se", "ci_low", "ci_high", "covered", "eps1", "eps2"],
    )?;
    write_csv(
        &out.join("summary.csv"),
        &summary,
        &["method", "bandwidth", "n_reps", "coverage", "mean_estimate", "bias", "sd", "rmse"],
    )?;
    write_csv(
        &out.join("histogram.csv"),
        &histograms(&estimates, &labels, k, exp.config.histogram_bins),
        &["bandwidth", "method", "bin", "bin_low", "bin_high", "count"],
    )?;
    write_csv(&out.join("failures.csv"), &failures, &["rep", "bandwidth", "reason"])?;
    write_csv(&out.join("warnings.csv"), &warnings, &["rep", "bandwidth", "message"])?;
    write_json(
        &out.join("truth.json"),
        &TruthRecord {
            design: exp.sim.design.name().into(),
            target: kind,
            truth,
            frozen: exp.sim.truth.contains_key(kind.name()),
            n: exp.sim.n,
            n_classes: truth_model.n_classes,
            seed: exp.sim.seed,
            n_replications: exp.config.n_replications,
        },
    )?;

    let maps = out.join("heatmaps");
    std::fs::create_dir_all(&maps)?;
    write_matrix(&maps.join("gm_truth.csv"), &truth_model.growth_matrix(None), 1)?;
    if let Ok(t) = growth_eif(kind, &truth_model) {
        write_matrix(&maps.join("eif_truth.csv"), &t, 0)?;
    }
    if let Some(cols) = results.first() {
        for (label, res) in cols {
            let Ok(state) = res else { continue };
            let dir = maps.join(format!("bw_{}", sanitize(label)));
            std::fs::create_dir_all(&dir)?;
            let mut stages = vec![("initial", &state.initial_models)];
            if state.iterations.len() > 1 {
                stages.push(("tmle", &state.models));
            }
            for (stage, models) in stages {
                if let Some((gm, eif)) = fold_heatmaps(kind, models) {
                    write_matrix(&dir.join(format!("gm_{stage}.csv")), &gm, 1)?;
                    write_matrix(&dir.join(format!("eif_{stage}.csv")), &eif, 0)?;
                }
            }
        }
    }

    let n_runs = results.len() * labels.len();
    let report = SimulateReport {
        truth,
        estimates,
        summary,
        n_runs,
        n_failures: failures.len(),
        output: out.clone(),
    };
    if report.n_failures * 10 > n_runs {
        return Err(CliError::Numeric(format!(
            "{} of {} runs failed (see {})",
            report.n_failures,
            n_runs,
            out.join("failures.csv").display()
        )));
    }
    Ok(report)
}
