//! Initial and targeted estimates for one dataset.

use std::fmt::Write as _;
use std::path::Path;

use ipm_tmle::data::read_dataset;
use ipm_tmle::tmle::{run_cv_tmle, IterationSnapshot};
use ipm_tmle::{Dataset, ModelSpec, TargetKind};
use serde::Serialize;

use crate::config::{base_dir, output_dir, prepare_output, read_json, resolve_path, AnalyzeConfig, InitialModel, Overrides};
use crate::error::{CliError, CliResult};
use crate::output::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&IterationSnapshot> for Interval {
    fn from(s: &IterationSnapshot) -> Self {
        Interval { estimate: s.estimate, std_error: s.std_error, ci_low: s.ci_low, ci_high: s.ci_high }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub target: TargetKind,
    pub n_records: usize,
    pub n_classes: usize,
    pub n_envs: usize,
    pub initial: Interval,
    pub tmle: Interval,
    pub converged: bool,
    pub epsilon_trace: Vec<(f64, f64)>,
    pub fold_estimates: Vec<f64>,
    pub iterations: Vec<IterationSnapshot>,
    pub warnings: Vec<String>,
}

pub fn analyze_dataset(data: &Dataset, cfg: &AnalyzeConfig) -> CliResult<AnalyzeReport> {
    let spec = match cfg.initial_model {
        InitialModel::Parametric => ModelSpec::Parametric(cfg.fit.clone()),
        InitialModel::Empirical => ModelSpec::Empirical,
    };
    let (est, state) = run_cv_tmle(data, &spec, &cfg.tmle)?;
    let mut warnings = Vec::new();
    for w in state.warnings.iter() {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    Ok(AnalyzeReport {
        target: cfg.tmle.target,
        n_records: data.len(),
        n_classes: data.n_classes(),
        n_envs: data.n_envs(),
        initial: state.initial().into(),
        tmle: Interval { estimate: est.estimate, std_error: est.std_error, ci_low: est.ci_low, ci_high: est.ci_high },
        converged: state.converged,
        epsilon_trace: state.epsilon_history.clone(),
        fold_estimates: state.last().fold_estimates.clone(),
        iterations: state.iterations.clone(),
        warnings,
    })
}

pub fn render(report: &AnalyzeReport) -> String {
    let mut s = String::new();
    let name = report.target.name();
    let _ = writeln!(s, "target      {name}");
    let _ = writeln!(s, "records     {} ({} classes, {} environments)", report.n_records, report.n_classes, report.n_envs);
    for (label, i) in [("initial", &report.initial), ("tmle", &report.tmle)] {
        let _ = writeln!(
            s,
            "{label:<11} {:.6}  se {:.6}  95% CI [{:.6}, {:.6}]",
            i.estimate, i.std_error, i.ci_low, i.ci_high
        );
    }
    let _ = writeln!(s, "converged   {}", report.converged);
    for (k, (e1, e2)) in report.epsilon_trace.iter().enumerate() {
        let _ = writeln!(s, "epsilon {:<3} growth {e1:+.3e}  fecundity {e2:+.3e}", k + 1);
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Load the config, read the data, write `report.json` and return the report.
pub fn run(config_path: &Path, input: Option<&Path>, ov: &Overrides) -> CliResult<AnalyzeReport> {
    let mut cfg: AnalyzeConfig = read_json(config_path)?;
    let base = base_dir(config_path);
    if let Some(seed) = ov.seed {
        cfg.tmle.seed = seed;
    }
    let input = match (input, &cfg.input) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => resolve_path(base, p),
        (None, None) => return Err(CliError::Usage("no input file: set `input` or pass --input".into())),
    };
    let data = read_dataset(&input, &cfg.schema)?;
    let report = analyze_dataset(&data, &cfg)?;
    let out = output_dir(ov, cfg.output.as_deref(), base, "out");
    prepare_output(&out)?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
