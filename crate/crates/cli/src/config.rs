//! JSON configuration files and command-line overrides.

use std::path::{Path, PathBuf};

use ipm_tmle::demography::{BandwidthPolicy, CvBandwidth};
use ipm_tmle::regress::DEFAULT_BANDWIDTHS;
use ipm_tmle::{FitConfig, SchemaConfig, SimSpec, TargetKind, TmleConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const OUT_ENV: &str = "IPM_TMLE_OUT";
pub const THREADS_ENV: &str = "IPM_TMLE_THREADS";

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Overrides {
    /// Flags win over environment variables.
    pub fn with_env(mut self) -> CliResult<Self> {
        if self.out.is_none() {
            self.out = std::env::var_os(OUT_ENV).map(PathBuf::from);
        }
        if self.threads.is_none() {
            if let Ok(v) = std::env::var(THREADS_ENV) {
                let t = v.parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be an integer, got `{v}`")))?;
                self.threads = Some(t);
            }
        }
        Ok(self)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

/// A simulation spec given inline or as a path to its own JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimSource {
    Path(PathBuf),
    Inline(Box<SimSpec>),
}

impl SimSource {
    pub fn load(&self, base: &Path) -> CliResult<SimSpec> {
        let spec = match self {
            SimSource::Inline(s) => (**s).clone(),
            SimSource::Path(p) => read_json(&resolve(base, p))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialModel {
    Parametric,
    Empirical,
}

/// A list of fixed bandwidths or the keyword `"cv"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidths {
    Fixed(Vec<f64>),
    Keyword(String),
}

fn default_target() -> TargetKind {
    TargetKind::Lambda
}
fn default_bandwidths() -> Bandwidths {
    Bandwidths::Fixed(vec![0.1])
}
fn default_initial() -> InitialModel {
    InitialModel::Parametric
}
fn default_folds() -> usize {
    5
}
fn default_iterations() -> usize {
    5
}
fn default_tol() -> f64 {
    1e-4
}
fn default_bound() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_bins() -> usize {
    30
}

/// Monte Carlo experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulation: SimSource,
    #[serde(default = "default_target")]
    pub target: TargetKind,
    #[serde(default = "default_bandwidths")]
    pub bandwidths: Bandwidths,
    /// Candidates searched when `bandwidths` is `"cv"`.
    #[serde(default)]
    pub cv_candidates: Option<Vec<f64>>,
    pub n_replications: usize,
    /// Overrides the simulation's sample size.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tol")]
    pub epsilon_tol: f64,
    #[serde(default = "default_bound")]
    pub epsilon_bound: f64,
    #[serde(default = "default_true")]
    pub cross_fit: bool,
    /// Overrides the simulation seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_initial")]
    pub initial_model: InitialModel,
    /// Regression formulas; its bandwidth field is replaced per run.
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

/// One column of the experiment: a label and how its initial model is built.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthChoice {
    pub label: String,
    pub policy: Option<BandwidthPolicy>,
}

/// Experiment with every override applied and every path resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sim: SimSpec,
    pub choices: Vec<BandwidthChoice>,
    pub output: PathBuf,
    pub threads: Option<usize>,
}

impl Experiment {
    pub fn tmle_config(&self, seed: u64) -> TmleConfig {
        TmleConfig {
            target: self.config.target,
            n_folds: self.config.n_folds,
            max_iterations: self.config.max_iterations,
            epsilon_tol: self.config.epsilon_tol,
            epsilon_bound: self.config.epsilon_bound,
            seed,
            cross_fit: self.config.cross_fit,
        }
    }
}

pub fn bandwidth_label(h: f64) -> String {
    format!("{h}")
}

impl ExperimentConfig {
    pub fn load(path: &Path, ov: &Overrides) -> CliResult<Experiment> {
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.resolve(base_dir(path), ov)
    }

    pub fn resolve(self, base: &Path, ov: &Overrides) -> CliResult<Experiment> {
        let mut sim = self.simulation.load(base)?;
        if let Some(n) = self.n {
            sim.n = n;
        }
        if let Some(s) = ov.seed.or(self.seed) {
            sim.seed = s;
        }
        sim.validate()?;
        if self.n_replications == 0 {
            return Err(CliError::Usage("n_replications must be at least 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(CliError::Usage("histogram_bins must be at least 1".into()));
        }
        let choices = match (self.initial_model, &self.bandwidths) {
            (InitialModel::Empirical, _) => vec![BandwidthChoice { label: "none".into(), policy: None }],
            (InitialModel::Parametric, Bandwidths::Fixed(list)) => {
                if list.is_empty() || list.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                    return Err(CliError::Usage("bandwidths must be a nonempty list of positive numbers".into()));
                }
                list.iter()
                    .map(|&h| BandwidthChoice { label: bandwidth_label(h), policy: Some(BandwidthPolicy::Fixed(h)) })
                    .collect()
            }
            (InitialModel::Parametric, Bandwidths::Keyword(k)) if k == "cv" => {
                let candidates = self.cv_candidates.clone().unwrap_or_else(|| DEFAULT_BANDWIDTHS.to_vec());
                vec![BandwidthChoice {
                    label: "cv".into(),
                    policy: Some(BandwidthPolicy::Cv(CvBandwidth { candidates, n_folds: 5, seed: sim.seed })),
                }]
            }
            (_, Bandwidths::Keyword(k)) => {
                return Err(CliError::Usage(format!("bandwidths: expected a list or \"cv\", got `{k}`")))
            }
        };
        let output = ov
            .out
            .clone()
            .or_else(|| self.output.as_ref().map(|p| resolve(base, p)))
            .unwrap_or_else(|| PathBuf::from("out"));
        let exp = Experiment { sim, choices, output, threads: ov.threads, config: self };
        exp.tmle_config(0).validate()?;
        Ok(exp)
    }
}

/// Single-dataset analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// CSV path, relative to the config file.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub schema: SchemaConfig,
    #[serde(default = "default_initial")]
    pub initial_model: InitialModel,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub tmle: TmleConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Influence-function oracle comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Random instances per class count and target.
    pub instances: usize,
    pub class_counts: Vec<usize>,
    pub targets: Vec<TargetKind>,
    pub step: f64,
    pub seed: u64,
    pub tol_lambda: f64,
    pub tol_elasticity: f64,
    pub tol_log_lambda_s: f64,
    pub tol_mean: f64,
    pub output: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            instances: 100,
            class_counts: vec![2, 3, 4],
            targets: vec![TargetKind::Lambda, TargetKind::Elasticity, TargetKind::LogLambdaS],
            step: 1e-6,
            seed: 0,
            tol_lambda: 1e-4,
            tol_elasticity: 1e-3,
            tol_log_lambda_s: 1e-4,
            tol_mean: 1e-10,
            output: None,
        }
    }
}

impl OracleConfig {
    pub fn tolerance(&self, kind: TargetKind) -> f64 {
        match kind {
            TargetKind::Lambda => self.tol_lambda,
            TargetKind::Elasticity => self.tol_elasticity,
            TargetKind::LogLambdaS => self.tol_log_lambda_s,
        }
    }
}

/// Output directory from overrides, then the config, then `default`.
pub fn output_dir(ov: &Overrides, configured: Option<&Path>, base: &Path, default: &str) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| configured.map(|p| resolve(base, p)))
        .unwrap_or_else(|| PathBuf::from(default))
}

/// Create `dir` and check that it accepts files.
pub fn prepare_output(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".write-check");
    std::fs::write(&probe, b"")
        .map_err(|e| CliError::Usage(format!("output directory {} is not writable: {e}", dir.display())))?;
    std::fs::remove_file(&probe)?;
    Ok(())
}

pub fn base_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    resolve(base, p)
}
