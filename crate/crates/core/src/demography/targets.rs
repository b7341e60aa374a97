use serde::{Deserialize, Serialize};

use super::eigen::{dominant_eigs, EigenSystem};
use super::model::DemographicModel;
use crate::error::{IpmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Lambda,
    Elasticity,
    LogLambdaS,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Lambda => "lambda",
            TargetKind::Elasticity => "elasticity",
            TargetKind::LogLambdaS => "log_lambda_s",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = IpmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(TargetKind::Lambda),
            "elasticity" => Ok(TargetKind::Elasticity),
            "log_lambda_s" => Ok(TargetKind::LogLambdaS),
            other => Err(IpmError::Config(format!("unknown target `{other}`"))),
        }
    }
}

/// Eigen-triple of the weighted mean kernel.
pub fn mean_kernel_eigs(model: &DemographicModel) -> Result<EigenSystem> {
    dominant_eigs(&model.kernel(None))
}

pub fn target_lambda(model: &DemographicModel) -> Result<f64> {
    Ok(mean_kernel_eigs(model)?.lambda)
}

/// `v'Fu / (lambda <v,u>)` on the mean kernel.
pub fn elasticity_with(model: &DemographicModel, eig: &EigenSystem) -> Result<f64> {
    if eig.lambda <= 1e-12 {
        return Err(IpmError::DegenerateEigenvalue);
    }
    let f = model.fecundity(None);
    Ok(eig.v.dot(&(&f * &eig.u)) / (eig.lambda * eig.v.dot(&eig.u)))
}

pub fn target_elasticity(model: &DemographicModel) -> Result<f64> {
    elasticity_with(model, &mean_kernel_eigs(model)?)
}

/// Share of `lambda` attributed to survival and growth, `v'(GM)u / (lambda <v,u>)`.
pub fn growth_elasticity(model: &DemographicModel) -> Result<f64> {
    let eig = mean_kernel_eigs(model)?;
    if eig.lambda <= 1e-12 {
        return Err(IpmError::DegenerateEigenvalue);
    }
    let gm = model.growth_matrix(None);
    Ok(eig.v.dot(&(&gm * &eig.u)) / (eig.lambda * eig.v.dot(&eig.u)))
}

/// `v'K_theta u / <v,u>` for every environment.
pub fn env_growth_terms(model: &DemographicModel, eig: &EigenSystem) -> Result<Vec<f64>> {
    let vu = eig.v.dot(&eig.u);
    model
        .envs
        .iter()
        .enumerate()
        .map(|(e, law)| {
            let c = eig.v.dot(&(law.kernel() * &eig.u)) / vu;
            if c > 0.0 {
                Ok(c)
            } else {
                let label = model.env_levels.get(e).cloned().unwrap_or_else(|| e.to_string());
                Err(IpmError::NonPositiveEnvironment(label))
            }
        })
        .collect()
}

/// Small-fluctuation approximation `sum_theta w_theta log(v'K_theta u / v'u)`.
pub fn log_lambda_s_with(model: &DemographicModel, eig: &EigenSystem) -> Result<f64> {
    let c = env_growth_terms(model, eig)?;
    Ok(model.env_weights.iter().zip(&c).filter(|(w, _)| **w != 0.0).map(|(w, c)| w * c.ln()).sum())
}

pub fn target_log_lambda_s(model: &DemographicModel) -> Result<f64> {
    log_lambda_s_with(model, &mean_kernel_eigs(model)?)
}

pub fn evaluate_target(kind: TargetKind, model: &DemographicModel) -> Result<f64> {
    let eig = mean_kernel_eigs(model)?;
    evaluate_with(kind, model, &eig)
}

pub fn evaluate_with(kind: TargetKind, model: &DemographicModel, eig: &EigenSystem) -> Result<f64> {
    match kind {
        TargetKind::Lambda => Ok(eig.lambda),
        TargetKind::Elasticity => elasticity_with(model, eig),
        TargetKind::LogLambdaS => log_lambda_s_with(model, eig),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::model::EnvLaw;
    use nalgebra::DMatrix;

    fn law(trans: &[f64], fec: &[f64]) -> EnvLaw {
        EnvLaw::new(DMatrix::from_row_slice(2, 3, trans), DMatrix::from_row_slice(2, 2, fec), vec![0.5, 0.5])
    }

    #[test]
    fn identity_survival_gives_unit_lambda() {
        let m = DemographicModel::single(law(&[0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[0.0; 4]));
        assert!((target_lambda(&m).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(target_elasticity(&m).unwrap(), 0.0);
    }

    #[test]
    fn elasticity_extremes_and_partition() {
        let dead = DemographicModel::single(law(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[0.3, 0.4, 0.5, 0.2]));
        assert!((target_elasticity(&dead).unwrap() - 1.0).abs() < 1e-12);
        let m = DemographicModel::single(law(&[0.3, 0.5, 0.2, 0.4, 0.1, 0.5], &[0.1, 0.0, 0.0, 0.1]));
        let e = target_elasticity(&m).unwrap();
        assert!((e + growth_elasticity(&m).unwrap() - 1.0).abs() < 1e-12);
        // finite-difference oracle: perturb F by (1 + h)
        let h = 1e-6;
        let lam = |s: f64| {
            let mut mm = m.clone();
            mm.envs[0].fecundity *= s;
            target_lambda(&mm).unwrap()
        };
        let fd = (lam(1.0 + h) - lam(1.0 - h)) / (2.0 * h * lam(1.0));
        assert!((fd - e).abs() < 1e-5);
    }

    #[test]
    fn single_environment_log_lambda_s_is_log_lambda() {
        let m = DemographicModel::single(law(&[0.3, 0.5, 0.2, 0.4, 0.1, 0.5], &[0.1, 0.0, 0.0, 0.1]));
        let l = target_lambda(&m).unwrap();
        assert!((target_log_lambda_s(&m).unwrap() - l.ln()).abs() < 1e-12);
    }

    #[test]
    fn reciprocal_scalar_environments_cancel() {
        let base = law(&[0.3, 0.5, 0.2, 0.4, 0.1, 0.5], &[0.1, 0.0, 0.0, 0.1]);
        let scaled = |c: f64| {
            let mut l = base.clone();
            for j in 1..3 {
                for i in 0..2 {
                    l.trans[(i, j)] *= c;
                }
            }
            l.fecundity *= c;
            l
        };
        // K_1 = 2 K_bar-ish and K_2 = K_bar/2 do not average to K_bar; use weights
        // so that the mean kernel equals the base kernel.
        let (c1, c2) = (2.0, 0.5);
        let w1 = (1.0 - c2) / (c1 - c2);
        let m = DemographicModel {
            n_classes: 2,
            envs: vec![scaled(c1), scaled(c2)],
            env_levels: vec!["a".into(), "b".into()],
            env_weights: vec![w1, 1.0 - w1],
            warnings: Vec::new(),
        };
        let lam = target_lambda(&DemographicModel::single(base)).unwrap();
        let expected = lam.ln() + w1 * c1.ln() + (1.0 - w1) * c2.ln();
        assert!((target_log_lambda_s(&m).unwrap() - expected).abs() < 1e-12);
    }
}
