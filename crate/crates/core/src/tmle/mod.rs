//! Targeted updates of the fitted law along exponential submodels, with
//! cross-fitting and influence-based intervals.

pub mod cv;
pub mod epsilon;
pub mod tilt;

pub use cv::{
    assign_folds, fit_fold_models, fold_plan, run_cv_tmle, run_tmle_with_models, IterationSnapshot, ModelSpec,
    TargetEstimate, TmleConfig, TmleState,
};
pub use epsilon::{fit_epsilon_fecundity, fit_epsilon_growth, EpsilonFit, FecundityObjective, FoldView, GrowthObjective};
pub use tilt::{tilt_fecundity, tilt_growth, tilt_row};
