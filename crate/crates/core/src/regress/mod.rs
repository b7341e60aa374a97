//! Regression and density primitives: GLMs fitted by IRLS and Gaussian
//! kernel density estimation with cross-validated bandwidth.

pub mod design;
pub mod glm;
pub mod kde;

pub use design::{Design, DesignInfo, FactorCoding};
pub use glm::{fit_glm, Family, GlmFit, GlmOptions};
pub use kde::{cv_bandwidth, cv_scores, kde_density, KdeFit, ResidualScale, DEFAULT_BANDWIDTHS};
