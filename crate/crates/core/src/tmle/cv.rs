//! Cross-validated targeting loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::epsilon::{fit_epsilon_fecundity, fit_epsilon_growth, FecundityObjective, FoldView, GrowthObjective};
use super::tilt::{tilt_fecundity, tilt_growth};
use crate::data::{Dataset, Observation};
use crate::demography::{
    dominant_eigs, empirical_model, estimate_model, evaluate_with, DemographicModel, FitConfig, TargetKind,
};
use crate::error::{IpmError, Result};
use crate::influence::{influence_tables, InfluenceTables};

pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmleConfig {
    pub target: TargetKind,
    pub n_folds: usize,
    pub max_iterations: usize,
    pub epsilon_tol: f64,
    /// Half-width of the fluctuation interval before the sup-norm rescale.
    pub epsilon_bound: f64,
    pub seed: u64,
    /// With `false` every fold is the whole sample: training and validation
    /// data coincide.
    pub cross_fit: bool,
}

impl Default for TmleConfig {
    fn default() -> Self {
        TmleConfig {
            target: TargetKind::Lambda,
            n_folds: 5,
            max_iterations: 5,
            epsilon_tol: 1e-4,
            epsilon_bound: 1.0,
            seed: 0,
            cross_fit: true,
        }
    }
}

impl TmleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cross_fit && self.n_folds < 2 {
            return Err(IpmError::Config("n_folds must be at least 2".into()));
        }
        if !(self.epsilon_bound > 0.0) {
            return Err(IpmError::Config("epsilon_bound must be positive".into()));
        }
        if !(self.epsilon_tol > 0.0) {
            return Err(IpmError::Config("epsilon_tol must be positive".into()));
        }
        Ok(())
    }
}

/// How the initial model is built on each training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Parametric(FitConfig),
    Empirical,
}

impl ModelSpec {
    pub fn fit(&self, dataset: &Dataset) -> Result<DemographicModel> {
        match self {
            ModelSpec::Parametric(cfg) => estimate_model(dataset, cfg),
            ModelSpec::Empirical => empirical_model(dataset),
        }
    }
}

/// Estimate and influence-based interval at one iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub iteration: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub fold_estimates: Vec<f64>,
    /// Fluctuations applied to reach this iterate (zero at iteration 0).
    pub eps1: f64,
    pub eps2: f64,
    pub mean_psi_growth: f64,
    pub mean_psi_fecundity: f64,
    pub sd_psi_growth: f64,
    pub sd_psi_fecundity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub target: TargetKind,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Record indices of the validation influence values below.
    pub validation_records: Vec<usize>,
    pub psi_validation: Vec<f64>,
    pub psi_growth: Vec<f64>,
    pub psi_fecundity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleState {
    pub fold_assignments: Vec<usize>,
    /// Training-fitted models before targeting; `None` for dropped folds.
    pub initial_models: Vec<Option<DemographicModel>>,
    /// Final tilted models.
    pub models: Vec<Option<DemographicModel>>,
    pub epsilon_history: Vec<(f64, f64)>,
    pub iterations: Vec<IterationSnapshot>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl TmleState {
    pub fn initial(&self) -> &IterationSnapshot {
        &self.iterations[0]
    }

    pub fn last(&self) -> &IterationSnapshot {
        self.iterations.last().expect("at least one iterate")
    }
}

/// Seeded fold labels: a random permutation dealt round-robin, so fold sizes
/// differ by at most one.
pub fn assign_folds(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        folds[idx] = pos % n_folds;
    }
    folds
}

/// Fold labels and training sets implied by `config`.
pub fn fold_plan(dataset: &Dataset, config: &TmleConfig) -> (Vec<usize>, Vec<Dataset>) {
    if !config.cross_fit {
        return (vec![0; dataset.len()], vec![dataset.clone()]);
    }
    let folds = assign_folds(dataset.len(), config.n_folds, config.seed);
    let training = (0..config.n_folds)
        .map(|v| {
            let idx: Vec<usize> = (0..dataset.len()).filter(|&i| folds[i] != v).collect();
            dataset.subset(&idx)
        })
        .collect();
    (folds, training)
}

/// Fit one model (or any per-fold fit) per training set, dropping folds
/// without survivors.
pub fn fit_fold_models<T, F>(training: &[Dataset], mut fit: F, warnings: &mut Vec<String>) -> Result<Vec<Option<T>>>
where
    F: FnMut(&Dataset) -> Result<T>,
{
    training
        .iter()
        .enumerate()
        .map(|(v, d)| match fit(d) {
            Ok(m) => Ok(Some(m)),
            Err(IpmError::NoSurvivors) => {
                warnings.push(format!("fold {}: training data has no survivors; fold dropped", v + 1));
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect()
}

pub fn run_cv_tmle(dataset: &Dataset, spec: &ModelSpec, config: &TmleConfig) -> Result<(TargetEstimate, TmleState)> {
    config.validate()?;
    if config.target == TargetKind::LogLambdaS && !dataset.has_env() {
        return Err(IpmError::EnvironmentRequired);
    }
    let (folds, training) = fold_plan(dataset, config);
    let mut warnings = Vec::new();
    let models = fit_fold_models(&training, |d| spec.fit(d), &mut warnings)?;
    run_tmle_with_models(dataset, folds, models, config, warnings)
}

struct FoldWork {
    fold: usize,
    model: DemographicModel,
    records: Vec<usize>,
    validation: Vec<Observation>,
}

fn tables_for(kind: TargetKind, model: &DemographicModel) -> Result<(f64, InfluenceTables)> {
    let eig = dominant_eigs(&model.kernel(None))?;
    let psi = evaluate_with(kind, model, &eig)?;
    Ok((psi, influence_tables(kind, model, &eig)?))
}

fn population_sd(xs: &[f64], mean: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn snapshot(
    kind: TargetKind,
    iteration: usize,
    eps: (f64, f64),
    fold_values: &[(f64, InfluenceTables)],
    work: &[FoldWork],
) -> (IterationSnapshot, TargetEstimate) {
    let mut est = TargetEstimate {
        target: kind,
        estimate: 0.0,
        std_error: 0.0,
        ci_low: 0.0,
        ci_high: 0.0,
        validation_records: Vec::new(),
        psi_validation: Vec::new(),
        psi_growth: Vec::new(),
        psi_fecundity: Vec::new(),
    };
    let fold_estimates: Vec<f64> = fold_values.iter().map(|(p, _)| *p).collect();
    let estimate = fold_estimates.iter().sum::<f64>() / fold_estimates.len() as f64;
    for ((_, tables), w) in fold_values.iter().zip(work) {
        for (o, &r) in w.validation.iter().zip(&w.records) {
            let ev = tables.evaluate(o);
            est.validation_records.push(r);
            est.psi_validation.push(ev.psi_total);
            est.psi_growth.push(ev.psi_growth);
            est.psi_fecundity.push(ev.psi_fecundity);
        }
    }
    let n = est.psi_validation.len() as f64;
    let se = est.psi_validation.iter().map(|p| p * p).sum::<f64>().sqrt() / n;
    let mg = est.psi_growth.iter().sum::<f64>() / n;
    let mf = est.psi_fecundity.iter().sum::<f64>() / n;
    est.estimate = estimate;
    est.std_error = se;
    est.ci_low = estimate - Z_975 * se;
    est.ci_high = estimate + Z_975 * se;
    let snap = IterationSnapshot {
        iteration,
        estimate,
        std_error: se,
        ci_low: est.ci_low,
        ci_high: est.ci_high,
        fold_estimates,
        eps1: eps.0,
        eps2: eps.1,
        mean_psi_growth: mg,
        mean_psi_fecundity: mf,
        sd_psi_growth: population_sd(&est.psi_growth, mg),
        sd_psi_fecundity: population_sd(&est.psi_fecundity, mf),
    };
    (snap, est)
}

/// Targeting loop from already fitted per-fold models; `models[v]` is the
/// fit on the training data of fold `v` (`None` when dropped).
pub fn run_tmle_with_models(
    dataset: &Dataset,
    fold_assignments: Vec<usize>,
    models: Vec<Option<DemographicModel>>,
    config: &TmleConfig,
    mut warnings: Vec<String>,
) -> Result<(TargetEstimate, TmleState)> {
    config.validate()?;
    let kind = config.target;
    let mut work: Vec<FoldWork> = Vec::new();
    for (v, m) in models.iter().enumerate() {
        let Some(m) = m else { continue };
        let records: Vec<usize> = (0..dataset.len()).filter(|&i| fold_assignments[i] == v).collect();
        if records.is_empty() {
            continue;
        }
        let validation = records.iter().map(|&i| dataset.observation(&dataset.records[i])).collect();
        work.push(FoldWork { fold: v, model: m.clone(), records, validation });
    }
    if work.is_empty() {
        return Err(IpmError::AllFoldsDropped);
    }
    for w in &work {
        for msg in &w.model.warnings {
            let tagged = format!("fold {}: {msg}", w.fold + 1);
            if !warnings.contains(&tagged) {
                warnings.push(tagged);
            }
        }
    }

    let mut current: Vec<(f64, InfluenceTables)> =
        work.iter().map(|w| tables_for(kind, &w.model)).collect::<Result<_>>()?;
    let (snap, mut estimate) = snapshot(kind, 0, (0.0, 0.0), &current, &work);
    let mut iterations = vec![snap];
    let mut history = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iterations {
        let views: Vec<FoldView> = work
            .iter()
            .zip(&current)
            .map(|(w, (_, t))| FoldView { model: &w.model, tables: t, validation: &w.validation })
            .collect();
        let g = fit_epsilon_growth(&GrowthObjective::new(&views), config.epsilon_bound);
        let grown: Vec<DemographicModel> =
            work.iter().zip(&current).map(|(w, (_, t))| tilt_growth(&w.model, t, g.epsilon)).collect();
        let grown_tables: Vec<(f64, InfluenceTables)> =
            grown.iter().map(|m| tables_for(kind, m)).collect::<Result<_>>()?;
        let views: Vec<FoldView> = work
            .iter()
            .zip(&grown)
            .zip(&grown_tables)
            .map(|((w, m), (_, t))| FoldView { model: m, tables: t, validation: &w.validation })
            .collect();
        let f = fit_epsilon_fecundity(&FecundityObjective::new(&views), config.epsilon_bound);
        history.push((g.epsilon, f.epsilon));
        for (fit, label) in [(g, "growth"), (f, "fecundity")] {
            if fit.at_boundary {
                warnings.push(format!("iteration {iteration}: {label} epsilon at boundary ({:e})", fit.epsilon));
            }
        }
        if g.epsilon.abs().max(f.epsilon.abs()) < config.epsilon_tol {
            converged = true;
            break;
        }
        for ((w, m), (_, t)) in work.iter_mut().zip(grown).zip(&grown_tables) {
            w.model = tilt_fecundity(&m, t, f.epsilon);
        }
        current = work.iter().map(|w| tables_for(kind, &w.model)).collect::<Result<_>>()?;
        let (snap, est) = snapshot(kind, iteration, (g.epsilon, f.epsilon), &current, &work);
        iterations.push(snap);
        estimate = est;
    }

    let mut initial_models: Vec<Option<DemographicModel>> = models;
    let mut final_models: Vec<Option<DemographicModel>> = vec![None; initial_models.len()];
    for w in work {
        final_models[w.fold] = Some(w.model);
    }
    for (v, m) in initial_models.iter_mut().enumerate() {
        if final_models[v].is_none() {
            *m = None;
        }
    }
    Ok((
        estimate,
        TmleState {
            fold_assignments,
            initial_models,
            models: final_models,
            epsilon_history: history,
            iterations,
            converged,
            warnings,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let f = assign_folds(103, 5, 9);
        let mut sizes = [0usize; 5];
        for &v in &f {
            sizes[v] += 1;
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(f, assign_folds(103, 5, 9));
        assert_ne!(f, assign_folds(103, 5, 10));
    }

    #[test]
    fn config_validation() {
        assert!(TmleConfig { n_folds: 1, ..Default::default() }.validate().is_err());
        assert!(TmleConfig { n_folds: 1, cross_fit: false, ..Default::default() }.validate().is_ok());
        let parsed: TmleConfig = serde_json::from_str(r#"{"target": "elasticity"}"#).unwrap();
        assert_eq!(parsed.target, TargetKind::Elasticity);
        assert_eq!(parsed.n_folds, 5);
    }
}
