//! Finite-difference Gateaux derivatives on finite-support laws.
//!
//! The functional is re-evaluated on `(1 - h) P + h delta_x` by rebuilding
//! every conditional from the contaminated joint law.

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::Observation;
use crate::demography::{evaluate_target, DemographicModel, EnvLaw, TargetKind};
use crate::error::{IpmError, Result};

/// One support point: source class, outcome (0 = death), dense offspring
/// vector and environment, all 0-based except `z_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub z: usize,
    pub z_star: usize,
    pub y: Vec<f64>,
    pub env: usize,
}

impl Atom {
    pub fn observation(&self) -> Observation {
        Observation {
            z: self.z,
            z_star: self.z_star,
            y: self.y.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(j, &c)| (j, c)).collect(),
            env: self.env,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    pub n_classes: usize,
    pub n_envs: usize,
    pub atoms: Vec<Atom>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    Target(TargetKind),
    /// Mean of the 1-based starting class.
    MeanClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub derivative: f64,
    /// The minus branch left the simplex and a forward difference was used.
    pub forward: bool,
}

impl DiscreteLaw {
    pub fn env_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_envs];
        for (a, &p) in self.atoms.iter().zip(&self.probs) {
            w[a.env] += p;
        }
        w
    }

    pub fn expectation<F: Fn(&Atom) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().zip(&self.probs).map(|(a, &p)| p * f(a)).sum()
    }

    /// Conditional law implied by the joint, without floors. With `weights`
    /// the environment weights are held at the given values.
    pub fn to_model(&self, weights: Option<&[f64]>) -> DemographicModel {
        let n = self.n_classes;
        let mut mass = vec![vec![0.0; n]; self.n_envs];
        let mut trans = vec![DMatrix::<f64>::zeros(n, n + 1); self.n_envs];
        let mut fec = vec![DMatrix::<f64>::zeros(n, n); self.n_envs];
        for (a, &p) in self.atoms.iter().zip(&self.probs) {
            mass[a.env][a.z] += p;
            trans[a.env][(a.z, a.z_star)] += p;
            for (j, &c) in a.y.iter().enumerate() {
                fec[a.env][(j, a.z)] += p * c;
            }
        }
        let env_mass = self.env_weights();
        let envs = (0..self.n_envs)
            .map(|e| {
                for i in 0..n {
                    let m = mass[e][i];
                    if m > 0.0 {
                        for j in 0..=n {
                            trans[e][(i, j)] /= m;
                        }
                        for j in 0..n {
                            fec[e][(j, i)] /= m;
                        }
                    } else {
                        trans[e][(i, 0)] = 1.0;
                    }
                }
                let marginal =
                    mass[e].iter().map(|&m| if env_mass[e] > 0.0 { m / env_mass[e] } else { 0.0 }).collect();
                EnvLaw::new(trans[e].clone(), fec[e].clone(), marginal)
            })
            .collect();
        DemographicModel {
            n_classes: n,
            envs,
            env_levels: (0..self.n_envs).map(|e| format!("env{e}")).collect(),
            env_weights: weights.map(|w| w.to_vec()).unwrap_or(env_mass),
            warnings: Vec::new(),
        }
    }

    /// `(1 - t) P + t delta_x`; `None` when some probability turns negative.
    pub fn contaminate(&self, atom: &Atom, t: f64) -> Option<DiscreteLaw> {
        let mut law = self.clone();
        for p in law.probs.iter_mut() {
            *p *= 1.0 - t;
        }
        match law.atoms.iter().position(|a| a == atom) {
            Some(k) => law.probs[k] += t,
            None => {
                law.atoms.push(atom.clone());
                law.probs.push(t);
            }
        }
        if law.probs.iter().any(|&p| p < 0.0) {
            None
        } else {
            Some(law)
        }
    }
}

pub fn functional_value(f: Functional, law: &DiscreteLaw, weights: Option<&[f64]>) -> Result<f64> {
    match f {
        Functional::MeanClass => Ok(law.expectation(|a| (a.z + 1) as f64)),
        Functional::Target(kind) => evaluate_target(kind, &law.to_model(weights)),
    }
}

/// Central difference `[Psi((1-h)P + h d) - Psi((1+h)P - h d)] / 2h`, falling
/// back to a forward difference when the minus branch is not a law.
/// Environment weights are held at those of `law`.
pub fn gateaux_oracle(f: Functional, law: &DiscreteLaw, atom: &Atom, h: f64) -> Result<OracleResult> {
    if !(1e-8..=1e-3).contains(&h) {
        return Err(IpmError::Config(format!("oracle step {h} outside [1e-8, 1e-3]")));
    }
    let weights = law.env_weights();
    let plus = law.contaminate(atom, h).expect("plus branch is a law");
    let f_plus = functional_value(f, &plus, Some(&weights))?;
    match law.contaminate(atom, -h) {
        Some(minus) => {
            let f_minus = functional_value(f, &minus, Some(&weights))?;
            Ok(OracleResult { derivative: (f_plus - f_minus) / (2.0 * h), forward: false })
        }
        None => {
            let f0 = functional_value(f, law, Some(&weights))?;
            Ok(OracleResult { derivative: (f_plus - f0) / h, forward: true })
        }
    }
}

/// Random full-support law with `Y` independent of `Z*` given `Z`: each
/// (environment, class) cell has 2 or 3 offspring vectors.
pub fn random_law<R: Rng>(rng: &mut R, n_classes: usize, n_envs: usize) -> DiscreteLaw {
    let n = n_classes;
    let normalized = |rng: &mut R, k: usize, lo: f64| -> Vec<f64> {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(lo..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    };
    let env_w = normalized(rng, n_envs, 0.3);
    let mut atoms = Vec::new();
    let mut probs = Vec::new();
    for e in 0..n_envs {
        let class_w = normalized(rng, n, 0.2);
        for z in 0..n {
            let outcome_w = normalized(rng, n + 1, 0.05);
            let n_y = rng.random_range(2..=3);
            let y_w = normalized(rng, n_y, 0.2);
            let ys: Vec<Vec<f64>> = (0..n_y)
                .map(|_| (0..n).map(|_| rng.random_range(0..=3) as f64).collect())
                .collect();
            for (z_star, &pw) in outcome_w.iter().enumerate() {
                for (y, &yw) in ys.iter().zip(&y_w) {
                    atoms.push(Atom { z, z_star, y: y.clone(), env: e });
                    probs.push(env_w[e] * class_w[z] * pw * yw);
                }
            }
        }
    }
    DiscreteLaw { n_classes: n, n_envs, atoms, probs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_functional_has_known_influence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let law = random_law(&mut rng, 3, 1);
        let mean = law.expectation(|a| (a.z + 1) as f64);
        for atom in law.atoms.iter().step_by(7) {
            let r = gateaux_oracle(Functional::MeanClass, &law, atom, 1e-5).unwrap();
            assert!((r.derivative - ((atom.z + 1) as f64 - mean)).abs() < 1e-8);
        }
    }

    #[test]
    fn point_mass_law_has_zero_derivative() {
        let atom = Atom { z: 0, z_star: 1, y: vec![1.0, 0.0], env: 0 };
        let mut law = DiscreteLaw { n_classes: 2, n_envs: 1, atoms: vec![atom.clone()], probs: vec![1.0] };
        // keep class 2 reachable so the kernel stays well defined
        law.atoms.push(Atom { z: 1, z_star: 2, y: vec![0.0, 1.0], env: 0 });
        law.probs = vec![1.0, 0.0];
        let r = gateaux_oracle(Functional::MeanClass, &law, &atom, 1e-5).unwrap();
        assert!(r.derivative.abs() < 1e-12);
    }

    #[test]
    fn conditionals_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let law = random_law(&mut rng, 4, 2);
        assert!((law.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m = law.to_model(None);
        for env in &m.envs {
            for i in 0..4 {
                assert!((env.trans.row(i).sum() - 1.0).abs() < 1e-12);
            }
            assert!((env.marginal.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn minus_branch_falls_back_to_forward_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let law = random_law(&mut rng, 2, 1);
        let outside = Atom { z: 0, z_star: 0, y: vec![7.0, 7.0], env: 0 };
        let r = gateaux_oracle(Functional::MeanClass, &law, &outside, 1e-5).unwrap();
        assert!(r.forward);
    }
}
