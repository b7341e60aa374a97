//! Gradients of each target with respect to the kernel entries, and the
//! per-cell influence tables built from them.
//!
//! A point mass at `(z, z*, y, theta)` perturbs only column `z` of the
//! kernel of environment `theta`. Writing `Gamma[j, i] = dPsi / dK_theta[j, i]`
//! (with the environment weight divided out), the influence function splits
//! into a growth piece
//! `(Gamma_g[z*, z] - sum_k Gamma_g[k, z] P(k | z)) / P(z | theta)` and a
//! fecundity piece `sum_j Gamma_f[j, z] (y_j - Q_j(z)) / P(z | theta)`.

use nalgebra::{DMatrix, DVector};

use crate::data::Observation;
use crate::demography::{deflated_pinv, DemographicModel, EigenSystem, TargetKind};
use crate::error::{IpmError, Result};

/// Per-environment gradient matrices, `[destination, source]`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub growth: Vec<DMatrix<f64>>,
    pub fecundity: Vec<DMatrix<f64>>,
}

/// First-order change of a scale-free bilinear form under `dK`:
/// `v a' - <v,a> v u' + b u' - <b,u> v u'`.
fn bilinear(v: &DVector<f64>, u: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let vu = v * u.transpose();
    v * a.transpose() + b * u.transpose() - vu * (v.dot(a) + b.dot(u))
}

pub fn gradients(kind: TargetKind, model: &DemographicModel, eig: &EigenSystem) -> Result<Gradients> {
    let n_envs = model.n_envs();
    let (v, u, lambda) = (&eig.v, &eig.u, eig.lambda);
    let vu = v * u.transpose();
    match kind {
        TargetKind::Lambda => Ok(Gradients { growth: vec![vu.clone(); n_envs], fecundity: vec![vu; n_envs] }),
        TargetKind::Elasticity => {
            if lambda <= 1e-12 {
                return Err(IpmError::DegenerateEigenvalue);
            }
            let k = model.kernel(None);
            let f = model.fecundity(None);
            let r = deflated_pinv(lambda, &k);
            let rt = r.transpose();
            let u1 = &r * u;
            let v1 = &rt * v;
            let u2 = &r * (&f * u);
            let v2 = &rt * (f.transpose() * v);
            let c = v.dot(&(&f * u));
            let d_num = bilinear(v, u, &u2, &v2);
            let d_den = &vu + bilinear(v, u, &u1, &v1) * lambda;
            let g = (d_num * lambda - d_den * c) / (lambda * lambda);
            let gf = &g + &vu / lambda;
            Ok(Gradients { growth: vec![g; n_envs], fecundity: vec![gf; n_envs] })
        }
        TargetKind::LogLambdaS => {
            let k = model.kernel(None);
            let r = deflated_pinv(lambda, &k);
            let rt = r.transpose();
            let u1 = &r * u;
            let v1 = &rt * v;
            let mut common = -bilinear(v, u, &u1, &v1);
            let mut c = vec![0.0; n_envs];
            for (e, law) in model.envs.iter().enumerate() {
                let ke = law.kernel();
                c[e] = v.dot(&(&ke * u));
                if !(c[e] > 0.0) {
                    let label = model.env_levels.get(e).cloned().unwrap_or_else(|| e.to_string());
                    return Err(IpmError::NonPositiveEnvironment(label));
                }
                let w = model.env_weights[e];
                if w == 0.0 {
                    continue;
                }
                let u2 = &r * (&ke * u);
                let v2 = &rt * (ke.transpose() * v);
                common += bilinear(v, u, &u2, &v2) * (w / c[e]);
            }
            let per_env: Vec<DMatrix<f64>> = c.iter().map(|&ce| &common + &vu / ce).collect();
            Ok(Gradients { growth: per_env.clone(), fecundity: per_env })
        }
    }
}

/// Influence values per cell, ready for evaluation and for the tilts.
#[derive(Debug, Clone)]
pub struct InfluenceTables {
    /// Per environment, `growth[(i, z*)]` is the growth piece for source
    /// class `i` and outcome `z*` (0 = death).
    pub growth: Vec<DMatrix<f64>>,
    /// Per environment, `clever[(j, i)] = Gamma_f[j, i] / P(i | theta)`.
    pub clever: Vec<DMatrix<f64>>,
    /// Per environment and source class, `sum_j clever[(j, i)] Q_j(i)`.
    pub fecundity_center: Vec<Vec<f64>>,
    /// Per environment and source class, whether the marginal was floored.
    pub floored: Vec<Vec<bool>>,
}

/// Influence function of one record split by submodel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceEvaluation {
    pub psi_growth: f64,
    pub psi_fecundity: f64,
    pub psi_total: f64,
    /// Set when the record's source class uses a floored marginal.
    pub floored: bool,
}

pub fn influence_tables(kind: TargetKind, model: &DemographicModel, eig: &EigenSystem) -> Result<InfluenceTables> {
    let grads = gradients(kind, model, eig)?;
    Ok(tables_from_gradients(model, &grads))
}

pub fn tables_from_gradients(model: &DemographicModel, grads: &Gradients) -> InfluenceTables {
    let n = model.n_classes;
    let mut growth = Vec::with_capacity(model.n_envs());
    let mut clever = Vec::with_capacity(model.n_envs());
    let mut center = Vec::with_capacity(model.n_envs());
    let mut floored = Vec::with_capacity(model.n_envs());
    for (e, law) in model.envs.iter().enumerate() {
        let gg = &grads.growth[e];
        let gf = &grads.fecundity[e];
        let mut phi = DMatrix::zeros(n, n + 1);
        let mut h = DMatrix::zeros(n, n);
        let mut c = vec![0.0; n];
        for i in 0..n {
            let p = law.marginal[i];
            let mean: f64 = (0..n).map(|k| gg[(k, i)] * law.trans[(i, k + 1)]).sum();
            phi[(i, 0)] = -mean / p;
            for j in 0..n {
                phi[(i, j + 1)] = (gg[(j, i)] - mean) / p;
                h[(j, i)] = gf[(j, i)] / p;
                c[i] += h[(j, i)] * law.fecundity[(j, i)];
            }
        }
        growth.push(phi);
        clever.push(h);
        center.push(c);
        floored.push((0..n).map(|i| law.is_floored(i)).collect());
    }
    InfluenceTables { growth, clever, fecundity_center: center, floored }
}

impl InfluenceTables {
    pub fn evaluate(&self, obs: &Observation) -> InfluenceEvaluation {
        let psi_growth = self.growth[obs.env][(obs.z, obs.z_star)];
        let h = &self.clever[obs.env];
        let observed: f64 = obs.y.iter().map(|&(j, c)| h[(j, obs.z)] * c).sum();
        let psi_fecundity = observed - self.fecundity_center[obs.env][obs.z];
        InfluenceEvaluation {
            psi_growth,
            psi_fecundity,
            psi_total: psi_growth + psi_fecundity,
            floored: self.floored[obs.env][obs.z],
        }
    }
}

/// Influence values of a batch of observations.
pub fn eif_values(
    kind: TargetKind,
    model: &DemographicModel,
    eig: &EigenSystem,
    obs: &[Observation],
) -> Result<Vec<InfluenceEvaluation>> {
    let t = influence_tables(kind, model, eig)?;
    Ok(obs.iter().map(|o| t.evaluate(o)).collect())
}

pub fn eif_lambda(obs: &Observation, model: &DemographicModel, eig: &EigenSystem) -> Result<InfluenceEvaluation> {
    Ok(influence_tables(TargetKind::Lambda, model, eig)?.evaluate(obs))
}

pub fn eif_elasticity(obs: &Observation, model: &DemographicModel, eig: &EigenSystem) -> Result<InfluenceEvaluation> {
    Ok(influence_tables(TargetKind::Elasticity, model, eig)?.evaluate(obs))
}

/// `eig` must be the eigen-triple of the weighted mean kernel.
pub fn eif_log_lambda_s(
    obs: &Observation,
    model: &DemographicModel,
    eig: &EigenSystem,
) -> Result<InfluenceEvaluation> {
    Ok(influence_tables(TargetKind::LogLambdaS, model, eig)?.evaluate(obs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::{dominant_eigs, EnvLaw};

    #[test]
    fn one_class_half_survival() {
        let law = EnvLaw::new(
            DMatrix::from_row_slice(1, 2, &[0.5, 0.5]),
            DMatrix::zeros(1, 1),
            vec![1.0],
        );
        let m = DemographicModel::single(law);
        let eig = dominant_eigs(&m.kernel(None)).unwrap();
        let alive = Observation { z: 0, z_star: 1, y: vec![], env: 0 };
        let dead = Observation { z: 0, z_star: 0, y: vec![], env: 0 };
        assert!((eif_lambda(&alive, &m, &eig).unwrap().psi_growth - 0.5).abs() < 1e-14);
        assert!((eif_lambda(&dead, &m, &eig).unwrap().psi_growth + 0.5).abs() < 1e-14);
    }

    #[test]
    fn fecundity_piece_vanishes_at_the_mean() {
        let law = EnvLaw::new(
            DMatrix::from_row_slice(2, 3, &[0.3, 0.5, 0.2, 0.4, 0.1, 0.5]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 3.0]),
            vec![0.4, 0.6],
        );
        let m = DemographicModel::single(law);
        let eig = dominant_eigs(&m.kernel(None)).unwrap();
        let obs = Observation { z: 0, z_star: 2, y: vec![(0, 1.0), (1, 2.0)], env: 0 };
        for kind in [TargetKind::Lambda, TargetKind::Elasticity, TargetKind::LogLambdaS] {
            let t = influence_tables(kind, &m, &eig).unwrap();
            assert!(t.evaluate(&obs).psi_fecundity.abs() < 1e-13);
        }
    }

    #[test]
    fn elasticity_without_fecundity_has_nonnegative_fecundity_piece() {
        let law = EnvLaw::new(
            DMatrix::from_row_slice(2, 3, &[0.3, 0.5, 0.2, 0.4, 0.1, 0.5]),
            DMatrix::zeros(2, 2),
            vec![0.4, 0.6],
        );
        let m = DemographicModel::single(law);
        let eig = dominant_eigs(&m.kernel(None)).unwrap();
        let obs = Observation { z: 1, z_star: 0, y: vec![(0, 2.0), (1, 1.0)], env: 0 };
        let psi = eif_elasticity(&obs, &m, &eig).unwrap();
        let expected = (eig.v[0] * 2.0 + eig.v[1] * 1.0) * eig.u[1] / (eig.lambda * 0.6);
        assert!((psi.psi_fecundity - expected).abs() < 1e-12);
        assert!(psi.psi_fecundity >= 0.0);
    }
}
