//! Estimation of long-run demographic targets of discretized integral
//! projection models, with cross-validated targeted maximum likelihood
//! updates and the simulation designs used to evaluate them.
//!
//! Classes are 1-based in public records (`z_class`, `z_next_class`, with
//! `0` meaning death). Internally, matrices are indexed `[destination, source]`
//! with 0-based classes, and transition rows carry death in slot 0.

pub mod data;
pub mod demography;
pub mod error;
pub mod influence;
pub mod numeric;
pub mod regress;
pub mod simgen;
pub mod tmle;

pub use data::{Dataset, IndividualRecord, Observation, SchemaConfig, SizeGrid};
pub use demography::{DemographicModel, EigenSystem, EnvLaw, FitConfig, TargetKind};
pub use error::{IpmError, Result};
pub use influence::{DiscreteLaw, InfluenceEvaluation};
pub use simgen::SimSpec;
pub use tmle::{ModelSpec, TargetEstimate, TmleConfig, TmleState};
