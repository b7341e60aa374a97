//! Single-environment design: seedling/Beta sizes, linear growth with Beta
//! noise, logistic survival and Poisson offspring.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::law::{EnvRates, SizeLaw};
use crate::data::{discretize, Dataset, IndividualRecord, SizeGrid};
use crate::error::{IpmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasicParams {
    pub seedling_prob: f64,
    pub size_a: f64,
    pub size_b: f64,
    pub growth_slope: f64,
    pub growth_scale: f64,
    pub growth_a: f64,
    pub growth_b: f64,
    pub surv_intercept: f64,
    pub surv_slope: f64,
    pub fec_intercept: f64,
    pub fec_slope: f64,
    /// Recruit class distribution; defaults to 0.9 on class 1 and 0.01 on
    /// each of classes 2..=11.
    pub recruit_probs: Option<Vec<f64>>,
}

impl Default for BasicParams {
    fn default() -> Self {
        BasicParams {
            seedling_prob: 0.35,
            size_a: 2.0,
            size_b: 2.0,
            growth_slope: 0.8,
            growth_scale: 0.2,
            growth_a: 8.0,
            growth_b: 8.0,
            surv_intercept: 0.1,
            surv_slope: 7.0,
            fec_intercept: -3.0,
            fec_slope: 1.0,
            recruit_probs: None,
        }
    }
}

/// `0.9` on class 1, `0.01` on classes 2..=11, renormalized when `n < 11`.
pub fn default_recruit_probs(n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[0] = 0.9;
    for v in p.iter_mut().skip(1).take(10) {
        *v = 0.01;
    }
    let s: f64 = p.iter().sum();
    p.into_iter().map(|v| v / s).collect()
}

pub(crate) fn check_probs(p: &[f64], n: usize, what: &str) -> Result<()> {
    if p.len() != n {
        return Err(IpmError::Config(format!("{what}: expected {n} entries, got {}", p.len())));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(IpmError::Config(format!("{what}: entries must be nonnegative and sum to 1")));
    }
    Ok(())
}

impl BasicParams {
    pub fn rates(&self, n: usize) -> Result<EnvRates> {
        let recruit = self.recruit_probs.clone().unwrap_or_else(|| default_recruit_probs(n));
        check_probs(&recruit, n, "recruit_probs")?;
        if !(0.0..1.0).contains(&self.seedling_prob) {
            return Err(IpmError::Config("seedling_prob must lie in [0, 1)".into()));
        }
        Ok(EnvRates {
            size: SizeLaw { seedling_prob: self.seedling_prob, a: self.size_a, b: self.size_b },
            growth_intercept: 0.0,
            growth_slope: self.growth_slope,
            resid_shift: 0.0,
            resid_scale: self.growth_scale,
            resid_a: self.growth_a,
            resid_b: self.growth_b,
            surv_seedling_eta: self.surv_intercept,
            surv_intercept: self.surv_intercept,
            surv_slope: self.surv_slope,
            fec_eta: self.fec_intercept,
            fec_slope: self.fec_slope,
            seedlings_reproduce: true,
            recruit_probs: recruit,
        })
    }
}

/// One individual: size, survival, next size and offspring (total drawn
/// first, then each recruit placed by the recruit class distribution).
pub(crate) fn draw_individual<R: Rng>(
    id: usize,
    rates: &EnvRates,
    grid: &SizeGrid,
    recruit_index: &WeightedIndex<f64>,
    rng: &mut R,
) -> IndividualRecord {
    let z = rates.size.sample(rng);
    let survived = rng.random::<f64>() < rates.survival(z);
    let z_next = survived.then(|| rates.sample_next(z, rng));
    let rate = rates.offspring_rate(z);
    let mut offspring = BTreeMap::new();
    if rate > 0.0 {
        let total = Poisson::new(rate).expect("positive rate").sample(rng) as u32;
        for _ in 0..total {
            *offspring.entry(recruit_index.sample(rng) + 1).or_insert(0) += 1;
        }
    }
    IndividualRecord {
        id: id.to_string(),
        z_continuous: z,
        z_next_continuous: z_next,
        z_class: discretize(z, grid),
        survived,
        z_next_class: z_next.map(|v| discretize(v, grid)).unwrap_or(0),
        offspring,
        env_label: None,
        covariates: Vec::new(),
    }
}

pub fn generate<R: Rng>(params: &BasicParams, n: usize, n_classes: usize, rng: &mut R) -> Result<Dataset> {
    let rates = params.rates(n_classes)?;
    let grid = rates.size.quantile_grid(n_classes);
    let recruit = WeightedIndex::new(&rates.recruit_probs).map_err(|e| IpmError::Config(e.to_string()))?;
    let records = (0..n).map(|k| draw_individual(k + 1, &rates, &grid, &recruit, rng)).collect();
    Dataset::new(records, grid, Vec::new(), Vec::new())
}
