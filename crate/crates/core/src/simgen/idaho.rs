//! Multi-year design with year-level climate covariates, separate seedling
//! survival and quadrat-level recruitment shared out by root area.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::basic::{check_probs, default_recruit_probs};
use super::law::{EnvRates, SizeLaw};
use crate::data::{discretize, Dataset, IndividualRecord};
use crate::demography::DemographicModel;
use crate::error::{IpmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateLaw {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Linear predictor pieces shared by every block. Empty vectors mean zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBlock {
    pub intercept: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub year_effects: Vec<f64>,
    #[serde(default)]
    pub cov_coefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthBlock {
    #[serde(flatten)]
    pub linear: LinearBlock,
    pub resid_shift: f64,
    pub resid_scale: f64,
    pub resid_a: f64,
    pub resid_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FecundityBlock {
    #[serde(flatten)]
    pub linear: LinearBlock,
    /// Area is `exp(area_exponent z)`; parents get recruits in proportion to
    /// its square root.
    pub area_exponent: f64,
    pub quadrat_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdahoParams {
    pub years: Vec<String>,
    #[serde(default)]
    pub year_weights: Option<Vec<f64>>,
    /// Seed for the per-year covariate draws, fixed across replications.
    #[serde(default)]
    pub env_seed: u64,
    pub seedling_prob: f64,
    pub size_a: f64,
    pub size_b: f64,
    #[serde(default)]
    pub covariates: Vec<CovariateLaw>,
    pub growth: Option<GrowthBlock>,
    pub survival_seedling: Option<LinearBlock>,
    pub survival: Option<LinearBlock>,
    pub fecundity: Option<FecundityBlock>,
    #[serde(default)]
    pub recruit_probs: Option<Vec<f64>>,
    #[serde(default)]
    pub seedlings_reproduce: bool,
}

struct Blocks<'a> {
    growth: &'a GrowthBlock,
    survival_seedling: &'a LinearBlock,
    survival: &'a LinearBlock,
    fecundity: &'a FecundityBlock,
}

impl IdahoParams {
    /// Illustrative defaults: eight years, five climate covariates.
    pub fn illustrative() -> Self {
        let years: Vec<String> = (1930..1938).map(|y| y.to_string()).collect();
        let names = ["ppt1", "ppt2", "TmeanSpr1", "TmeanSpr2", "pptLag"];
        let covariates = names
            .iter()
            .zip([(300.0, 60.0), (300.0, 60.0), (8.0, 1.5), (8.0, 1.5), (280.0, 50.0)])
            .map(|(n, (mean, sd))| CovariateLaw { name: n.to_string(), mean, sd })
            .collect();
        let block = |intercept: f64, slope: f64, years: &[f64], covs: &[f64]| LinearBlock {
            intercept,
            slope,
            year_effects: years.to_vec(),
            cov_coefs: covs.to_vec(),
        };
        IdahoParams {
            years,
            year_weights: None,
            env_seed: 1926,
            seedling_prob: 0.25,
            size_a: 1.5,
            size_b: 2.5,
            covariates,
            growth: Some(GrowthBlock {
                linear: block(
                    0.05,
                    0.85,
                    &[0.0, 0.02, -0.03, 0.01, 0.03, -0.02, 0.0, -0.01],
                    &[1e-4, 5e-5, -2e-3, -1e-3, 0.0],
                ),
                resid_shift: -0.12,
                resid_scale: 0.24,
                resid_a: 6.0,
                resid_b: 6.0,
            }),
            survival_seedling: Some(block(
                -0.6,
                0.0,
                &[0.0, 0.4, -0.5, 0.2, 0.6, -0.3, 0.1, -0.2],
                &[2e-3, 1e-3, -0.05, -0.02, 0.0],
            )),
            survival: Some(block(
                0.2,
                5.0,
                &[0.0, 0.3, -0.4, 0.1, 0.5, -0.2, 0.0, -0.1],
                &[1e-3, 5e-4, -0.03, -0.01, 0.0],
            )),
            fecundity: Some(FecundityBlock {
                linear: block(-2.3, 0.0, &[0.0, 0.3, -0.6, 0.2, 0.5, -0.4, 0.1, -0.2], &[1e-3, 0.0, 0.0, 0.0, 0.0]),
                area_exponent: 3.0,
                quadrat_size: 25,
            }),
            recruit_probs: None,
            seedlings_reproduce: false,
        }
    }

    fn blocks(&self) -> Result<Blocks<'_>> {
        let missing = |name: &str| IpmError::Config(format!("idaho_like: missing coefficient block `{name}`"));
        Ok(Blocks {
            growth: self.growth.as_ref().ok_or_else(|| missing("growth"))?,
            survival_seedling: self.survival_seedling.as_ref().ok_or_else(|| missing("survival_seedling"))?,
            survival: self.survival.as_ref().ok_or_else(|| missing("survival"))?,
            fecundity: self.fecundity.as_ref().ok_or_else(|| missing("fecundity"))?,
        })
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        let k = self.years.len();
        match &self.year_weights {
            Some(w) => {
                check_probs(w, k, "year_weights")?;
                Ok(w.clone())
            }
            None => Ok(vec![1.0 / k as f64; k]),
        }
    }

    /// Year-level covariate values, drawn once from `env_seed`.
    pub fn year_covariates(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.env_seed);
        self.years
            .iter()
            .map(|_| {
                self.covariates
                    .iter()
                    .map(|c| if c.sd > 0.0 { Normal::new(c.mean, c.sd).expect("valid normal").sample(&mut rng) } else { c.mean })
                    .collect()
            })
            .collect()
    }

    fn validate(&self, b: &Blocks) -> Result<()> {
        if self.years.is_empty() {
            return Err(IpmError::Config("idaho_like: at least one year required".into()));
        }
        let k = self.years.len();
        let c = self.covariates.len();
        for (name, l) in [
            ("growth", &b.growth.linear),
            ("survival_seedling", b.survival_seedling),
            ("survival", b.survival),
            ("fecundity", &b.fecundity.linear),
        ] {
            if !(l.year_effects.is_empty() || l.year_effects.len() == k) {
                return Err(IpmError::Config(format!("idaho_like: `{name}.year_effects` must have {k} entries")));
            }
            if !(l.cov_coefs.is_empty() || l.cov_coefs.len() == c) {
                return Err(IpmError::Config(format!("idaho_like: `{name}.cov_coefs` must have {c} entries")));
            }
            let finite = l.intercept.is_finite()
                && l.slope.is_finite()
                && l.year_effects.iter().chain(&l.cov_coefs).all(|v| v.is_finite());
            if !finite {
                return Err(IpmError::Config(format!("idaho_like: `{name}` has non-finite coefficients")));
            }
        }
        if !(b.growth.resid_scale > 0.0) || b.fecundity.quadrat_size == 0 {
            return Err(IpmError::Config("idaho_like: resid_scale and quadrat_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.seedling_prob) {
            return Err(IpmError::Config("idaho_like: seedling_prob must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Vital rates of every year.
    pub fn year_rates(&self, n_classes: usize) -> Result<Vec<EnvRates>> {
        let b = self.blocks()?;
        self.validate(&b)?;
        let recruit = self.recruit_probs.clone().unwrap_or_else(|| default_recruit_probs(n_classes));
        check_probs(&recruit, n_classes, "recruit_probs")?;
        let covs = self.year_covariates();
        let eta = |l: &LinearBlock, year: usize| {
            let ye = l.year_effects.get(year).copied().unwrap_or(0.0);
            let cv: f64 = l.cov_coefs.iter().zip(&covs[year]).map(|(c, x)| c * x).sum();
            l.intercept + ye + cv
        };
        Ok((0..self.years.len())
            .map(|y| EnvRates {
                size: SizeLaw { seedling_prob: self.seedling_prob, a: self.size_a, b: self.size_b },
                growth_intercept: eta(&b.growth.linear, y),
                growth_slope: b.growth.linear.slope,
                resid_shift: b.growth.resid_shift,
                resid_scale: b.growth.resid_scale,
                resid_a: b.growth.resid_a,
                resid_b: b.growth.resid_b,
                surv_seedling_eta: eta(b.survival_seedling, y),
                surv_intercept: eta(b.survival, y),
                surv_slope: b.survival.slope,
                fec_eta: eta(&b.fecundity.linear, y),
                fec_slope: 0.5 * b.fecundity.area_exponent,
                seedlings_reproduce: self.seedlings_reproduce,
                recruit_probs: recruit.clone(),
            })
            .collect())
    }

    pub fn truth_model(&self, n_classes: usize, nodes: usize) -> Result<DemographicModel> {
        let rates = self.year_rates(n_classes)?;
        let grid = rates[0].size.quantile_grid(n_classes);
        Ok(DemographicModel {
            n_classes: grid.n_classes,
            envs: rates.iter().map(|r| r.class_law(&grid, nodes)).collect(),
            env_levels: self.years.clone(),
            env_weights: self.weights()?,
            warnings: Vec::new(),
        })
    }
}

pub fn generate<R: Rng>(params: &IdahoParams, n: usize, n_classes: usize, rng: &mut R) -> Result<Dataset> {
    let rates = params.year_rates(n_classes)?;
    let fec = params.fecundity.as_ref().expect("validated");
    let grid = rates[0].size.quantile_grid(n_classes);
    let covs = params.year_covariates();
    let year_index = WeightedIndex::new(params.weights()?).map_err(|e| IpmError::Config(e.to_string()))?;
    let recruit = WeightedIndex::new(&rates[0].recruit_probs).map_err(|e| IpmError::Config(e.to_string()))?;

    let mut records: Vec<IndividualRecord> = (0..n)
        .map(|k| {
            let y = year_index.sample(rng);
            let r = &rates[y];
            let z = r.size.sample(rng);
            let survived = rng.random::<f64>() < r.survival(z);
            let z_next = survived.then(|| r.sample_next(z, rng));
            IndividualRecord {
                id: (k + 1).to_string(),
                z_continuous: z,
                z_next_continuous: z_next,
                z_class: discretize(z, &grid),
                survived,
                z_next_class: z_next.map(|v| discretize(v, &grid)).unwrap_or(0),
                offspring: BTreeMap::new(),
                env_label: Some(params.years[y].clone()),
                covariates: covs[y].clone(),
            }
        })
        .collect();

    // quadrats: consecutive runs of `quadrat_size` records within a year
    for (y, year) in params.years.iter().enumerate() {
        let members: Vec<usize> =
            (0..n).filter(|&k| records[k].env_label.as_deref() == Some(year.as_str())).collect();
        for quadrat in members.chunks(fec.quadrat_size) {
            let parents: Vec<usize> = quadrat
                .iter()
                .copied()
                .filter(|&k| params.seedlings_reproduce || records[k].z_continuous > 0.0)
                .collect();
            if parents.is_empty() {
                continue;
            }
            let root_area: Vec<f64> =
                parents.iter().map(|&k| (0.5 * fec.area_exponent * records[k].z_continuous).exp()).collect();
            let mean = rates[y].fec_eta.exp() * root_area.iter().sum::<f64>();
            let total = Poisson::new(mean).expect("positive rate").sample(rng) as u32;
            let parent_index = WeightedIndex::new(&root_area).expect("positive weights");
            for _ in 0..total {
                let parent = parents[parent_index.sample(rng)];
                let class = recruit.sample(rng) + 1;
                *records[parent].offspring.entry(class).or_insert(0) += 1;
            }
        }
    }
    let names = params.covariates.iter().map(|c| c.name.clone()).collect();
    Dataset::new(records, grid, params.years.clone(), names)
}
