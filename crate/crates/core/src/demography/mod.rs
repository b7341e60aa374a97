//! Kernel assembly, the dominant eigen-system and the three targets.

pub mod eigen;
pub mod export;
pub mod model;
pub mod targets;

pub use eigen::{deflated_pinv, dominant_eigs, is_primitive, EigenSystem};
pub use model::{
    empirical_model, estimate_model, kernel_matrix, BandwidthPolicy, ComponentFits, CvBandwidth, DemographicModel,
    EnvLaw, FitConfig,
};
pub use targets::{
    evaluate_target, evaluate_with, growth_elasticity, mean_kernel_eigs, target_elasticity, target_lambda,
    target_log_lambda_s, TargetKind,
};
