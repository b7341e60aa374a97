//! The estimated conditional law and the plug-in fits that produce it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IndividualRecord, SizeGrid};
use crate::error::{IpmError, Result};
use crate::regress::{cv_bandwidth, fit_glm, Design, FactorCoding, Family, GlmFit, GlmOptions, KdeFit, ResidualScale};

pub const PROB_FLOOR: f64 = 1e-12;

/// Conditional law within one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLaw {
    /// `trans[(i, j)] = P(Z* = j | Z = i)`; column 0 is death, column `j` the 1-based class `j`.
    pub trans: DMatrix<f64>,
    /// `fecundity[(j, i)] = E(Y_j | Z = i)`, 0-based classes.
    pub fecundity: DMatrix<f64>,
    /// `P(Z = i)` within the environment, floored and renormalized.
    pub marginal: Vec<f64>,
    /// Classes whose marginal was raised by the positivity floor.
    #[serde(default)]
    pub floored: Vec<bool>,
}

impl EnvLaw {
    pub fn new(trans: DMatrix<f64>, fecundity: DMatrix<f64>, marginal: Vec<f64>) -> Self {
        let floored = vec![false; marginal.len()];
        EnvLaw { trans, fecundity, marginal, floored }
    }

    pub fn is_floored(&self, class: usize) -> bool {
        self.floored.get(class).copied().unwrap_or(false)
    }

    pub fn n_classes(&self) -> usize {
        self.marginal.len()
    }

    /// `G M`: survival-and-growth part of the kernel.
    pub fn growth_matrix(&self) -> DMatrix<f64> {
        let n = self.n_classes();
        DMatrix::from_fn(n, n, |j, i| self.trans[(i, j + 1)])
    }

    pub fn kernel(&self) -> DMatrix<f64> {
        self.growth_matrix() + &self.fecundity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicModel {
    pub n_classes: usize,
    /// One law per environment; a single entry when there are no environments.
    pub envs: Vec<EnvLaw>,
    pub env_levels: Vec<String>,
    pub env_weights: Vec<f64>,
    pub warnings: Vec<String>,
}

impl DemographicModel {
    pub fn single(law: EnvLaw) -> Self {
        DemographicModel {
            n_classes: law.n_classes(),
            envs: vec![law],
            env_levels: Vec::new(),
            env_weights: vec![1.0],
            warnings: Vec::new(),
        }
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    /// `K_theta` for one environment, or the weighted mean kernel for `None`.
    pub fn kernel(&self, env: Option<usize>) -> DMatrix<f64> {
        match env {
            Some(e) => self.envs[e].kernel(),
            None => self.weighted(|l| l.kernel()),
        }
    }

    pub fn growth_matrix(&self, env: Option<usize>) -> DMatrix<f64> {
        match env {
            Some(e) => self.envs[e].growth_matrix(),
            None => self.weighted(|l| l.growth_matrix()),
        }
    }

    pub fn fecundity(&self, env: Option<usize>) -> DMatrix<f64> {
        match env {
            Some(e) => self.envs[e].fecundity.clone(),
            None => self.weighted(|l| l.fecundity.clone()),
        }
    }

    fn weighted<F: Fn(&EnvLaw) -> DMatrix<f64>>(&self, f: F) -> DMatrix<f64> {
        let n = self.n_classes;
        let mut acc = DMatrix::zeros(n, n);
        for (law, &w) in self.envs.iter().zip(&self.env_weights) {
            if w != 0.0 {
                acc += f(law) * w;
            }
        }
        acc
    }

    /// Overall class marginal `sum_theta w_theta P(Z = i | theta)`.
    pub fn marginal(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for (law, &w) in self.envs.iter().zip(&self.env_weights) {
            for (pi, &li) in p.iter_mut().zip(&law.marginal) {
                *pi += w * li;
            }
        }
        p
    }
}

/// `K = G M + F` from the kernel's pieces.
pub fn kernel_matrix(model: &DemographicModel, env: Option<usize>) -> DMatrix<f64> {
    model.kernel(env)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthPolicy {
    Fixed(f64),
    Cv(CvBandwidth),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvBandwidth {
    pub candidates: Vec<f64>,
    #[serde(default = "default_cv_folds")]
    pub n_folds: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_cv_folds() -> usize {
    5
}

/// Model formulas for the parametric plug-in fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub bandwidth: BandwidthPolicy,
    /// Include `factor(environment)` in every regression.
    pub env_effects: bool,
    /// Environment-level covariates (names from the dataset) added to every regression.
    pub covariates: Vec<String>,
    /// Separate survival models for the seedling class and the rest.
    pub separate_seedling_survival: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bandwidth: BandwidthPolicy::Fixed(0.05),
            env_effects: true,
            covariates: Vec::new(),
            separate_seedling_survival: true,
        }
    }
}

/// Builds design rows `[1, z?, z_r?, factor(env)..., covariates...]`.
#[derive(Debug, Clone)]
struct RowSpec {
    use_z: bool,
    use_zr: bool,
    factor: Option<FactorCoding>,
    n_cov: usize,
}

impl RowSpec {
    fn names(&self, env_labels: &[String], cov_names: &[String]) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        if self.use_z {
            names.push("z".into());
        }
        if self.use_zr {
            names.push("z_r".into());
        }
        if let Some(f) = &self.factor {
            names.extend(f.column_names(env_labels));
        }
        names.extend(cov_names.iter().cloned());
        names
    }

    fn row(&self, z: f64, zr: f64, env: usize, cov: &[f64]) -> Vec<f64> {
        let mut r = vec![1.0];
        if self.use_z {
            r.push(z);
        }
        if self.use_zr {
            r.push(zr);
        }
        if let Some(f) = &self.factor {
            f.push_indicators(env, &mut r);
        }
        r.extend_from_slice(&cov[..self.n_cov]);
        r
    }
}

#[derive(Debug, Clone)]
struct RegressionFit {
    spec: RowSpec,
    glm: GlmFit,
}

impl RegressionFit {
    fn predict(&self, z: f64, zr: f64, env: usize, cov: &[f64]) -> f64 {
        self.glm.predict(&self.spec.row(z, zr, env, cov))
    }
}

/// Plug-in fits that do not depend on the KDE bandwidth. Building a model for
/// several bandwidths reuses them.
#[derive(Debug, Clone)]
pub struct ComponentFits {
    grid: SizeGrid,
    n_envs: usize,
    env_levels: Vec<String>,
    env_weights: Vec<f64>,
    env_covariates: Vec<Vec<f64>>,
    representative: Vec<f64>,
    marginals: Vec<(Vec<f64>, Vec<bool>)>,
    growth: RegressionFit,
    residual_scale: ResidualScale,
    residuals_unit: Vec<f64>,
    survival_seedling: Option<RegressionFit>,
    survival: RegressionFit,
    fecundity_seedling: Option<RegressionFit>,
    fecundity: Option<RegressionFit>,
    warnings: Vec<String>,
}

fn covariate_columns(dataset: &Dataset, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            dataset
                .covariate_names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| IpmError::Config(format!("unknown covariate `{n}`")))
        })
        .collect()
}

fn fit_regression(
    family: Family,
    spec: RowSpec,
    rows: &[(f64, f64, usize, &[f64])],
    y: &[f64],
    env_labels: &[String],
    cov_names: &[String],
    warnings: &mut Vec<String>,
    label: &str,
) -> Result<RegressionFit> {
    let mut design = Design::new(spec.names(env_labels, cov_names));
    if let Some(f) = &spec.factor {
        design = design.with_factor(f.clone());
    }
    for &(z, zr, env, cov) in rows {
        design.push_row(&spec.row(z, zr, env, cov));
    }
    let glm = fit_glm(family, y, &design, &GlmOptions::default())?;
    warnings.extend(glm.warnings.iter().map(|w| format!("{label}: {w}")));
    Ok(RegressionFit { spec, glm })
}

/// Per-environment class frequencies, floored at `1/(2 n_theta)` and
/// renormalized, with the classes where the floor was applied.
pub fn floored_marginals(dataset: &Dataset, warnings: &mut Vec<String>) -> Vec<(Vec<f64>, Vec<bool>)> {
    let n = dataset.n_classes();
    let mut counts = vec![vec![0.0; n]; dataset.n_envs()];
    for r in &dataset.records {
        counts[dataset.env_index(r)][r.z_class - 1] += 1.0;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(e, c)| {
            let total: f64 = c.iter().sum();
            if total == 0.0 {
                return (vec![1.0 / n as f64; n], vec![true; n]);
            }
            let floor = 1.0 / (2.0 * total);
            let zero: Vec<usize> = (0..n).filter(|&i| c[i] == 0.0).map(|i| i + 1).collect();
            if !zero.is_empty() {
                let env = dataset.env_levels.get(e).map(|l| format!(" in environment `{l}`")).unwrap_or_default();
                warnings.push(format!("positivity: classes {zero:?} have zero marginal count{env}; floored at {floor:e}"));
            }
            let p: Vec<f64> = c.iter().map(|&ci| (ci / total).max(floor)).collect();
            let s: f64 = p.iter().sum();
            let flags = c.iter().map(|&ci| ci / total < floor).collect();
            (p.into_iter().map(|pi| pi / s).collect(), flags)
        })
        .collect()
}

fn env_covariate_means(dataset: &Dataset, cols: &[usize]) -> Vec<Vec<f64>> {
    let overall: Vec<f64> = cols
        .iter()
        .map(|&c| dataset.records.iter().map(|r| r.covariates[c]).sum::<f64>() / dataset.len() as f64)
        .collect();
    (0..dataset.n_envs())
        .map(|e| {
            let members: Vec<&IndividualRecord> = dataset.records.iter().filter(|r| dataset.env_index(r) == e).collect();
            if members.is_empty() {
                return overall.clone();
            }
            cols.iter().map(|&c| members.iter().map(|r| r.covariates[c]).sum::<f64>() / members.len() as f64).collect()
        })
        .collect()
}

impl ComponentFits {
    pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<Self> {
        if dataset.is_empty() {
            return Err(IpmError::NoRecords);
        }
        let grid = dataset.grid.clone();
        let n = grid.n_classes;
        let n_envs = dataset.n_envs();
        let mut warnings = Vec::new();
        let cov_cols = covariate_columns(dataset, &config.covariates)?;
        let n_cov = cov_cols.len();
        let env_labels = dataset.env_levels.clone();
        let cov_names = config.covariates.clone();
        let use_env = config.env_effects && dataset.has_env();

        let envs: Vec<usize> = dataset.records.iter().map(|r| dataset.env_index(r)).collect();
        let covs: Vec<Vec<f64>> = dataset.records.iter().map(|r| cov_cols.iter().map(|&c| r.covariates[c]).collect()).collect();
        let env_covariates = env_covariate_means(dataset, &cov_cols);

        let factor_for = |idx: &[usize], name: &str, warnings: &mut Vec<String>| -> Option<FactorCoding> {
            if !use_env {
                return None;
            }
            let codes: Vec<usize> = idx.iter().map(|&k| envs[k]).collect();
            let f = FactorCoding::from_codes(name, &codes);
            let absent: Vec<&str> =
                (0..n_envs).filter(|&e| !f.is_known(e)).map(|e| env_labels[e].as_str()).collect();
            if !absent.is_empty() {
                warnings.push(format!("{name}: environments {absent:?} absent from training; using baseline"));
            }
            Some(f)
        };

        // Representative size of each source class.
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for r in &dataset.records {
            sums[r.z_class - 1] += r.z_continuous;
            counts[r.z_class - 1] += 1;
        }
        let representative: Vec<f64> =
            (0..n).map(|i| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { grid.midpoint(i + 1) }).collect();

        // Growth among survivors.
        let survivors: Vec<usize> = (0..dataset.len()).filter(|&k| dataset.records[k].survived).collect();
        if survivors.is_empty() {
            return Err(IpmError::NoSurvivors);
        }
        let spec = RowSpec { use_z: true, use_zr: false, factor: factor_for(&survivors, "year", &mut warnings), n_cov };
        let rows: Vec<(f64, f64, usize, &[f64])> = survivors
            .iter()
            .map(|&k| (dataset.records[k].z_continuous, 0.0, envs[k], covs[k].as_slice()))
            .collect();
        let y: Vec<f64> = survivors
            .iter()
            .map(|&k| dataset.records[k].z_next_continuous.ok_or(IpmError::Parse { row: k + 1, message: "survivor without next size".into() }))
            .collect::<Result<_>>()?;
        let growth = fit_regression(Family::Gaussian, spec, &rows, &y, &env_labels, &cov_names, &mut warnings, "growth")?;
        let residuals: Vec<f64> = rows.iter().zip(&y).map(|(&(z, zr, e, c), &yv)| yv - growth.predict(z, zr, e, c)).collect();
        let residual_scale = ResidualScale::fit(&residuals);
        let residuals_unit: Vec<f64> = residuals.iter().map(|&r| residual_scale.to_unit(r)).collect();

        // Survival.
        let is_seedling = |r: &IndividualRecord| grid.has_seedling_class && r.z_class == 1;
        let seedlings: Vec<usize> = (0..dataset.len()).filter(|&k| is_seedling(&dataset.records[k])).collect();
        let split = config.separate_seedling_survival && !seedlings.is_empty() && seedlings.len() < dataset.len();
        let surv_y = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&k| dataset.records[k].survived as u8 as f64).collect() };
        let (survival_seedling, survival) = if split {
            let rest: Vec<usize> = (0..dataset.len()).filter(|&k| !is_seedling(&dataset.records[k])).collect();
            let spec_s = RowSpec { use_z: false, use_zr: false, factor: factor_for(&seedlings, "year", &mut warnings), n_cov };
            let rows_s: Vec<_> = seedlings.iter().map(|&k| (0.0, 0.0, envs[k], covs[k].as_slice())).collect();
            let s = fit_regression(Family::Binomial, spec_s, &rows_s, &surv_y(&seedlings), &env_labels, &cov_names, &mut warnings, "seedling survival")?;
            let spec_n = RowSpec { use_z: true, use_zr: false, factor: factor_for(&rest, "year", &mut warnings), n_cov };
            let rows_n: Vec<_> = rest.iter().map(|&k| (dataset.records[k].z_continuous, 0.0, envs[k], covs[k].as_slice())).collect();
            let m = fit_regression(Family::Binomial, spec_n, &rows_n, &surv_y(&rest), &env_labels, &cov_names, &mut warnings, "survival")?;
            (Some(s), m)
        } else {
            let all: Vec<usize> = (0..dataset.len()).collect();
            let spec = RowSpec { use_z: true, use_zr: false, factor: factor_for(&all, "year", &mut warnings), n_cov };
            let rows: Vec<_> = all.iter().map(|&k| (dataset.records[k].z_continuous, 0.0, envs[k], covs[k].as_slice())).collect();
            (None, fit_regression(Family::Binomial, spec, &rows, &surv_y(&all), &env_labels, &cov_names, &mut warnings, "survival")?)
        };

        // Fecundity: seedling-class offspring ~ z, other classes ~ z + z_r.
        let all: Vec<usize> = (0..dataset.len()).collect();
        let first_other = grid.has_seedling_class as usize;
        let seed_total: u64 = if grid.has_seedling_class {
            dataset.records.iter().map(|r| r.offspring.get(&1).copied().unwrap_or(0) as u64).sum()
        } else {
            0
        };
        let other_total: u64 =
            dataset.records.iter().flat_map(|r| r.offspring.iter()).filter(|(&j, _)| j > first_other).map(|(_, &c)| c as u64).sum();
        let fecundity_seedling = if seed_total > 0 {
            let spec = RowSpec { use_z: true, use_zr: false, factor: factor_for(&all, "year", &mut warnings), n_cov };
            let rows: Vec<_> = all.iter().map(|&k| (dataset.records[k].z_continuous, 0.0, envs[k], covs[k].as_slice())).collect();
            let y: Vec<f64> = all.iter().map(|&k| dataset.records[k].offspring.get(&1).copied().unwrap_or(0) as f64).collect();
            Some(fit_regression(Family::Poisson, spec, &rows, &y, &env_labels, &cov_names, &mut warnings, "seedling fecundity")?)
        } else {
            None
        };
        let fecundity = if other_total > 0 {
            let spec = RowSpec { use_z: true, use_zr: true, factor: factor_for(&all, "year", &mut warnings), n_cov };
            let mut rows = Vec::with_capacity(dataset.len() * (n - first_other));
            let mut y = Vec::with_capacity(rows.capacity());
            for &k in &all {
                let r = &dataset.records[k];
                for j in first_other..n {
                    rows.push((r.z_continuous, grid.midpoint(j + 1), envs[k], covs[k].as_slice()));
                    y.push(r.offspring.get(&(j + 1)).copied().unwrap_or(0) as f64);
                }
            }
            Some(fit_regression(Family::Poisson, spec, &rows, &y, &env_labels, &cov_names, &mut warnings, "fecundity")?)
        } else {
            None
        };

        let marginals = floored_marginals(dataset, &mut warnings);
        Ok(ComponentFits {
            grid,
            n_envs,
            env_levels: dataset.env_levels.clone(),
            env_weights: dataset.env_weights(),
            env_covariates,
            representative,
            marginals,
            growth,
            residual_scale,
            residuals_unit,
            survival_seedling,
            survival,
            fecundity_seedling,
            fecundity,
            warnings,
        })
    }

    /// Residuals of the growth regression on the unit scale.
    pub fn residuals_unit(&self) -> &[f64] {
        &self.residuals_unit
    }

    pub fn select_bandwidth(&self, policy: &BandwidthPolicy) -> f64 {
        match policy {
            BandwidthPolicy::Fixed(h) => *h,
            BandwidthPolicy::Cv(cv) => cv_bandwidth(&self.residuals_unit, &cv.candidates, cv.n_folds, cv.seed),
        }
    }

    /// Assemble the model for a growth-residual bandwidth.
    pub fn model(&self, bandwidth: f64) -> DemographicModel {
        let n = self.grid.n_classes;
        let kde = KdeFit::new(self.residuals_unit.clone(), bandwidth);
        let cuts = self.grid.cut_points();
        let envs = (0..self.n_envs)
            .map(|e| {
                let cov = &self.env_covariates[e];
                let mut trans = DMatrix::zeros(n, n + 1);
                let mut fec = DMatrix::zeros(n, n);
                for i in 0..n {
                    let z = self.representative[i];
                    let seedling = self.grid.has_seedling_class && i == 0;
                    let surv = match (&self.survival_seedling, seedling) {
                        (Some(s), true) => s.predict(0.0, 0.0, e, cov),
                        _ => self.survival.predict(z, 0.0, e, cov),
                    };
                    let pred = self.growth.predict(z, 0.0, e, cov);
                    let cdf: Vec<f64> =
                        cuts.iter().map(|&c| kde.cdf(self.residual_scale.to_unit(c - pred))).collect();
                    trans[(i, 0)] = (1.0 - surv).max(PROB_FLOOR);
                    for j in 0..n {
                        trans[(i, j + 1)] = (surv * (cdf[j + 1] - cdf[j]).max(0.0)).max(PROB_FLOOR);
                    }
                    let s: f64 = trans.row(i).sum();
                    for j in 0..=n {
                        trans[(i, j)] /= s;
                    }
                    for j in 0..n {
                        let q = if self.grid.has_seedling_class && j == 0 {
                            self.fecundity_seedling.as_ref().map(|f| f.predict(z, 0.0, e, cov))
                        } else {
                            self.fecundity.as_ref().map(|f| f.predict(z, self.grid.midpoint(j + 1), e, cov))
                        };
                        fec[(j, i)] = q.unwrap_or(0.0);
                    }
                }
                let (marginal, floored) = self.marginals[e].clone();
                EnvLaw { trans, fecundity: fec, marginal, floored }
            })
            .collect();
        DemographicModel {
            n_classes: n,
            envs,
            env_levels: self.env_levels.clone(),
            env_weights: self.env_weights.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Parametric plug-in model: linear growth with KDE residuals, logistic
/// survival and Poisson fecundity.
pub fn estimate_model(dataset: &Dataset, config: &FitConfig) -> Result<DemographicModel> {
    let fits = ComponentFits::fit(dataset, config)?;
    let h = fits.select_bandwidth(&config.bandwidth);
    Ok(fits.model(h))
}

/// Nonparametric model from observed frequencies and sample means.
pub fn empirical_model(dataset: &Dataset) -> Result<DemographicModel> {
    if dataset.is_empty() {
        return Err(IpmError::NoRecords);
    }
    let n = dataset.n_classes();
    let n_envs = dataset.n_envs();
    let mut warnings = Vec::new();
    let mut trans = vec![DMatrix::<f64>::zeros(n, n + 1); n_envs];
    let mut fec = vec![DMatrix::<f64>::zeros(n, n); n_envs];
    let mut counts = vec![vec![0.0; n]; n_envs];
    for r in &dataset.records {
        let e = dataset.env_index(r);
        let i = r.z_class - 1;
        counts[e][i] += 1.0;
        trans[e][(i, r.z_next_class)] += 1.0;
        for (&j, &c) in &r.offspring {
            fec[e][(j - 1, i)] += c as f64;
        }
    }
    for e in 0..n_envs {
        let mut unsupported = Vec::new();
        for i in 0..n {
            if counts[e][i] == 0.0 {
                trans[e][(i, 0)] = 1.0;
                unsupported.push(i + 1);
                continue;
            }
            for j in 0..=n {
                trans[e][(i, j)] /= counts[e][i];
            }
            for j in 0..n {
                fec[e][(j, i)] /= counts[e][i];
            }
        }
        if !unsupported.is_empty() {
            let env = dataset.env_levels.get(e).map(|l| format!(" in environment `{l}`")).unwrap_or_default();
            warnings.push(format!("unsupported source classes {unsupported:?}{env}: treated as certain death with no offspring"));
        }
    }
    let marginals = floored_marginals(dataset, &mut warnings);
    let envs = trans
        .into_iter()
        .zip(fec)
        .zip(marginals)
        .map(|((trans, fecundity), (marginal, floored))| EnvLaw { trans, fecundity, marginal, floored })
        .collect();
    Ok(DemographicModel {
        n_classes: n,
        envs,
        env_levels: dataset.env_levels.clone(),
        env_weights: dataset.env_weights(),
        warnings,
    })
}
