//! Age by maternal-age-group design with 64 discrete states.
//!
//! State `g * 16 + (a - 1)` holds age `a` in maternal group `g`. Survivors
//! move to age `a + 1` in the same group; daughters enter age 1 of the group
//! set by the mother's age (1-4, 5-6, 7-8, 9-16).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::basic::check_probs;
use crate::data::{Dataset, IndividualRecord, SizeGrid};
use crate::demography::{DemographicModel, EnvLaw};
use crate::error::{IpmError, Result};

pub const AGES: usize = 16;
pub const GROUPS: usize = 4;
pub const STATES: usize = AGES * GROUPS;

/// Maternal group (0-based) of daughters born to a mother of age `age` (1-based).
pub fn daughter_group(age: usize) -> usize {
    match age {
        1..=4 => 0,
        5..=6 => 1,
        7..=8 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RotiferParams {
    /// `survival[g][a - 1]`: probability that age `a` survives to `a + 1`.
    pub survival: Vec<Vec<f64>>,
    /// `fertility[g][a - 1]`: expected daughters per day.
    pub fertility: Vec<Vec<f64>>,
    /// Optional full fertility matrix `[destination][source]`, checked against
    /// the sparsity pattern and used instead of `fertility` when present.
    pub fertility_matrix: Option<Vec<Vec<f64>>>,
    /// State distribution of sampled records; uniform when absent.
    pub marginal: Option<Vec<f64>>,
}

impl Default for RotiferParams {
    fn default() -> Self {
        let survival = (0..GROUPS)
            .map(|g| {
                (1..=AGES)
                    .map(|a| if a == AGES { 0.0 } else { (0.97 - 0.035 * (a as f64 - 1.0) - 0.03 * g as f64).max(0.2) })
                    .collect()
            })
            .collect();
        let fertility = (0..GROUPS)
            .map(|g| {
                (1..=AGES)
                    .map(|a| {
                        if a == 1 {
                            0.0
                        } else {
                            let peak = 3.0 * (1.0 - 0.12 * g as f64);
                            peak * (-(a as f64 - 5.0).powi(2) / 18.0).exp()
                        }
                    })
                    .collect()
            })
            .collect();
        RotiferParams { survival, fertility, fertility_matrix: None, marginal: None }
    }
}

impl RotiferParams {
    fn check_shape(m: &[Vec<f64>], what: &str) -> Result<()> {
        if m.len() != GROUPS || m.iter().any(|r| r.len() != AGES) {
            return Err(IpmError::Config(format!("rotifer_like: `{what}` must be {GROUPS} x {AGES}")));
        }
        if m.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(IpmError::Config(format!("rotifer_like: `{what}` entries must be finite and nonnegative")));
        }
        Ok(())
    }

    /// Fertility as `[destination][source]` over the 64 states.
    pub fn fertility_matrix(&self) -> Result<DMatrix<f64>> {
        if let Some(full) = &self.fertility_matrix {
            if full.len() != STATES || full.iter().any(|r| r.len() != STATES) {
                return Err(IpmError::Config("rotifer_like: `fertility_matrix` must be 64 x 64".into()));
            }
            let m = DMatrix::from_fn(STATES, STATES, |j, i| full[j][i]);
            for j in 0..STATES {
                for i in 0..STATES {
                    let allowed = j == AGES * daughter_group(i % AGES + 1);
                    if m[(j, i)] != 0.0 && !allowed {
                        return Err(IpmError::Config(format!(
                            "rotifer_like: fertility mass at row {} column {} lies outside the age-1 rows of the maternal groups",
                            j + 1,
                            i + 1
                        )));
                    }
                    if !(m[(j, i)].is_finite() && m[(j, i)] >= 0.0) {
                        return Err(IpmError::Config("rotifer_like: fertility entries must be nonnegative".into()));
                    }
                }
            }
            return Ok(m);
        }
        Self::check_shape(&self.fertility, "fertility")?;
        let mut m = DMatrix::zeros(STATES, STATES);
        for g in 0..GROUPS {
            for a in 1..=AGES {
                m[(AGES * daughter_group(a), g * AGES + a - 1)] = self.fertility[g][a - 1];
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        Self::check_shape(&self.survival, "survival")?;
        if self.survival.iter().flatten().any(|&p| p > 1.0) {
            return Err(IpmError::Config("rotifer_like: survival probabilities must lie in [0, 1]".into()));
        }
        if self.survival.iter().any(|r| r[AGES - 1] != 0.0) {
            return Err(IpmError::Config("rotifer_like: age 16 cannot survive".into()));
        }
        if let Some(m) = &self.marginal {
            check_probs(m, STATES, "rotifer_like marginal")?;
        }
        self.fertility_matrix().map(|_| ())
    }

    fn marginal(&self) -> Vec<f64> {
        self.marginal.clone().unwrap_or_else(|| vec![1.0 / STATES as f64; STATES])
    }

    pub fn truth_model(&self) -> Result<DemographicModel> {
        self.validate()?;
        let mut trans = DMatrix::zeros(STATES, STATES + 1);
        for s in 0..STATES {
            let (g, a) = (s / AGES, s % AGES + 1);
            let p = self.survival[g][a - 1];
            trans[(s, 0)] = 1.0 - p;
            if a < AGES {
                trans[(s, s + 2)] = p;
            }
        }
        Ok(DemographicModel::single(EnvLaw::new(trans, self.fertility_matrix()?, self.marginal())))
    }
}

pub fn grid() -> SizeGrid {
    SizeGrid::uniform(STATES, 0.0, 1.0)
}

fn position(class: usize) -> f64 {
    (class as f64 - 0.5) / STATES as f64
}

pub fn generate<R: Rng>(params: &RotiferParams, n: usize, rng: &mut R) -> Result<Dataset> {
    params.validate()?;
    let fert = params.fertility_matrix()?;
    let state_index = WeightedIndex::new(params.marginal()).map_err(|e| IpmError::Config(e.to_string()))?;
    let records = (0..n)
        .map(|k| {
            let s = state_index.sample(rng);
            let (g, a) = (s / AGES, s % AGES + 1);
            let survived = rng.random::<f64>() < params.survival[g][a - 1];
            let next = if survived { s + 2 } else { 0 };
            let mut offspring = BTreeMap::new();
            for j in 0..STATES {
                let mu = fert[(j, s)];
                if mu > 0.0 {
                    let c = Poisson::new(mu).expect("positive rate").sample(rng) as u32;
                    if c > 0 {
                        offspring.insert(j + 1, c);
                    }
                }
            }
            IndividualRecord {
                id: (k + 1).to_string(),
                z_continuous: position(s + 1),
                z_next_continuous: survived.then(|| position(next)),
                z_class: s + 1,
                survived,
                z_next_class: next,
                offspring,
                env_label: None,
                covariates: Vec::new(),
            }
        })
        .collect();
    Dataset::new(records, grid(), Vec::new(), Vec::new())
}
