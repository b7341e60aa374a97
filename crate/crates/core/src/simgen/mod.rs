//! Synthetic populations with known class-level truth.
//!
//! A [`SimSpec`] names a design, a sample size, a grid size and a seed.
//! Replication `r` draws from a ChaCha8 stream seeded by `seed` on stream
//! `r`, so replications are independent of scheduling.

pub mod basic;
pub mod idaho;
pub mod law;
pub mod rotifer;

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use basic::BasicParams;
pub use idaho::IdahoParams;
pub use law::{EnvRates, SizeLaw};
pub use rotifer::RotiferParams;

use crate::data::Dataset;
use crate::demography::{evaluate_target, DemographicModel, TargetKind};
use crate::error::{IpmError, Result};

/// Quadrature nodes per class for the exact truth.
pub const TRUTH_NODES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum Design {
    Basic(BasicParams),
    IdahoLike(IdahoParams),
    RotiferLike(RotiferParams),
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Design::Basic(_) => "basic",
            Design::IdahoLike(_) => "idaho_like",
            Design::RotiferLike(_) => "rotifer_like",
        }
    }
}

fn default_classes() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(flatten)]
    pub design: Design,
    pub n: usize,
    /// Ignored by the rotifer design, which always has 64 states.
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Frozen true target values keyed by target name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub truth: BTreeMap<String, f64>,
}

impl SimSpec {
    pub fn basic(n: usize, n_classes: usize, seed: u64) -> Self {
        SimSpec { design: Design::Basic(BasicParams::default()), n, n_classes, seed, truth: BTreeMap::new() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SimSpec = serde_json::from_str(text).map_err(|e| IpmError::Config(format!("simulation spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(IpmError::Config("simulation spec: n must be positive".into()));
        }
        if !matches!(self.design, Design::RotiferLike(_)) && self.n_classes < 2 {
            return Err(IpmError::Config("simulation spec: n_classes must be at least 2".into()));
        }
        match &self.design {
            Design::Basic(p) => p.rates(self.n_classes).map(|_| ()),
            Design::IdahoLike(p) => p.year_rates(self.n_classes).map(|_| ()),
            Design::RotiferLike(p) => p.validate(),
        }
    }

    pub fn rng(&self, rep: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        rng
    }

    /// Dataset of replication `rep`.
    pub fn generate(&self, rep: u64) -> Result<Dataset> {
        let mut rng = self.rng(rep);
        match &self.design {
            Design::Basic(p) => basic::generate(p, self.n, self.n_classes, &mut rng),
            Design::IdahoLike(p) => idaho::generate(p, self.n, self.n_classes, &mut rng),
            Design::RotiferLike(p) => rotifer::generate(p, self.n, &mut rng),
        }
    }

    /// Class-level law of the population, computed from the design.
    pub fn truth_model(&self) -> Result<DemographicModel> {
        match &self.design {
            Design::Basic(p) => {
                let rates = p.rates(self.n_classes)?;
                let grid = rates.size.quantile_grid(self.n_classes);
                Ok(DemographicModel::single(rates.class_law(&grid, TRUTH_NODES)))
            }
            Design::IdahoLike(p) => p.truth_model(self.n_classes, TRUTH_NODES),
            Design::RotiferLike(p) => p.truth_model(),
        }
    }

    /// Computed true value of a target.
    pub fn compute_truth(&self, kind: TargetKind) -> Result<f64> {
        evaluate_target(kind, &self.truth_model()?)
    }

    /// Frozen value when present, otherwise computed.
    pub fn truth(&self, kind: TargetKind) -> Result<f64> {
        match self.truth.get(kind.name()) {
            Some(&v) => Ok(v),
            None => self.compute_truth(kind),
        }
    }
}
