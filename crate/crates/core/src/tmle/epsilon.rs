//! One-dimensional fluctuation fits on the pooled validation data.
//!
//! Records are grouped by (fold, environment, source class), so every
//! objective evaluation costs one pass over the grid rather than the data.
//! Each fold contributes with weight `1 / V`, and records within a fold with
//! weight `1 / n_v`.

use crate::data::Observation;
use crate::demography::DemographicModel;
use crate::influence::InfluenceTables;
use crate::numeric::{brent_minimize, floored_ln};

pub const EPSILON_TOL: f64 = 1e-8;
const MAX_BRENT_ITER: usize = 500;

/// One fold's fitted model, its influence tables and its validation records.
pub struct FoldView<'a> {
    pub model: &'a DemographicModel,
    pub tables: &'a InfluenceTables,
    pub validation: &'a [Observation],
}

#[derive(Debug, Clone)]
struct GrowthCell {
    p: Vec<f64>,
    phi: Vec<f64>,
    /// `(outcome, weight)` for every observed outcome of the cell.
    counts: Vec<(usize, f64)>,
}

/// Pooled validation log-likelihood of the tilted transition rows.
#[derive(Debug, Clone)]
pub struct GrowthObjective {
    cells: Vec<GrowthCell>,
    sup_phi: f64,
}

#[derive(Debug, Clone)]
struct FecundityCell {
    q: Vec<f64>,
    h: Vec<f64>,
    /// Weighted offspring totals per destination class.
    y: Vec<f64>,
    weight: f64,
}

/// Pooled validation Poisson-type loss `sum_j -Y_j log Q_j + Q_j`.
#[derive(Debug, Clone)]
pub struct FecundityObjective {
    cells: Vec<FecundityCell>,
    sup_h: f64,
}

fn fold_weights(folds: &[FoldView]) -> Vec<f64> {
    let v = folds.len() as f64;
    folds.iter().map(|f| if f.validation.is_empty() { 0.0 } else { 1.0 / (v * f.validation.len() as f64) }).collect()
}

impl GrowthObjective {
    pub fn new(folds: &[FoldView]) -> Self {
        let weights = fold_weights(folds);
        let mut cells = Vec::new();
        let mut sup_phi = 0.0f64;
        for (fold, &w) in folds.iter().zip(&weights) {
            let n = fold.model.n_classes;
            for phi in &fold.tables.growth {
                sup_phi = sup_phi.max(phi.amax());
            }
            let mut counts = vec![vec![vec![0.0; n + 1]; n]; fold.model.n_envs()];
            for o in fold.validation {
                counts[o.env][o.z][o.z_star] += w;
            }
            for (e, per_env) in counts.into_iter().enumerate() {
                let law = &fold.model.envs[e];
                let phi = &fold.tables.growth[e];
                for (i, row) in per_env.into_iter().enumerate() {
                    let observed: Vec<(usize, f64)> =
                        row.into_iter().enumerate().filter(|(_, c)| *c > 0.0).collect();
                    if observed.is_empty() {
                        continue;
                    }
                    cells.push(GrowthCell {
                        p: (0..=n).map(|j| law.trans[(i, j)]).collect(),
                        phi: (0..=n).map(|j| phi[(i, j)]).collect(),
                        counts: observed,
                    });
                }
            }
        }
        GrowthObjective { cells, sup_phi }
    }

    pub fn sup_direction(&self) -> f64 {
        self.sup_phi
    }

    /// `(1/V) sum_v P_n^(v) log p_eps`.
    pub fn value(&self, eps: f64) -> f64 {
        let mut total = 0.0;
        for c in &self.cells {
            let m = c
                .p
                .iter()
                .zip(&c.phi)
                .filter(|(&p, _)| p > 0.0)
                .map(|(_, &f)| eps * f)
                .fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = c.p.iter().zip(&c.phi).filter(|(&p, _)| p > 0.0).map(|(&p, &f)| p * (eps * f - m).exp()).sum();
            for &(j, w) in &c.counts {
                let pj = c.p[j] * (eps * c.phi[j] - m).exp() / s;
                total += w * floored_ln(pj);
            }
        }
        total
    }
}

impl FecundityObjective {
    pub fn new(folds: &[FoldView]) -> Self {
        let weights = fold_weights(folds);
        let mut cells = Vec::new();
        let mut sup_h = 0.0f64;
        for (fold, &w) in folds.iter().zip(&weights) {
            let n = fold.model.n_classes;
            for h in &fold.tables.clever {
                sup_h = sup_h.max(h.amax());
            }
            let mut ysum = vec![vec![vec![0.0; n]; n]; fold.model.n_envs()];
            let mut wsum = vec![vec![0.0; n]; fold.model.n_envs()];
            for o in fold.validation {
                wsum[o.env][o.z] += w;
                for &(j, c) in &o.y {
                    ysum[o.env][o.z][j] += w * c;
                }
            }
            for e in 0..fold.model.n_envs() {
                let law = &fold.model.envs[e];
                let h = &fold.tables.clever[e];
                for i in 0..n {
                    if wsum[e][i] == 0.0 {
                        continue;
                    }
                    cells.push(FecundityCell {
                        q: (0..n).map(|j| law.fecundity[(j, i)]).collect(),
                        h: (0..n).map(|j| h[(j, i)]).collect(),
                        y: std::mem::take(&mut ysum[e][i]),
                        weight: wsum[e][i],
                    });
                }
            }
        }
        FecundityObjective { cells, sup_h }
    }

    pub fn sup_direction(&self) -> f64 {
        self.sup_h
    }

    pub fn value(&self, eps: f64) -> f64 {
        let mut total = 0.0;
        for c in &self.cells {
            for j in 0..c.q.len() {
                let q = c.q[j] * (eps * c.h[j]).exp();
                if c.y[j] > 0.0 {
                    total -= c.y[j] * floored_ln(q);
                }
                total += c.weight * q;
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonFit {
    pub epsilon: f64,
    /// Half-width of the search interval after rescaling by the sup-norm.
    pub bound: f64,
    pub at_boundary: bool,
    /// Objective, in minimization orientation, at 0 and at the fit.
    pub objective_at_zero: f64,
    pub objective_at_fit: f64,
}

/// Minimize `f` over `[-b, b]` with `b = bound / max(1, sup)`. Zero wins ties.
pub fn minimize_bounded<F: Fn(f64) -> f64>(f: F, bound: f64, sup: f64) -> EpsilonFit {
    let b = bound / sup.max(1.0);
    let f0 = f(0.0);
    let r = brent_minimize(&f, -b, b, EPSILON_TOL, MAX_BRENT_ITER);
    let (mut eps, mut fe) = (r.x, r.fx);
    let mut at_boundary = false;
    if b - eps.abs() <= 1e-6 * b {
        eps = b.copysign(eps);
        fe = f(eps);
        at_boundary = true;
    }
    if !(fe < f0) {
        return EpsilonFit { epsilon: 0.0, bound: b, at_boundary: false, objective_at_zero: f0, objective_at_fit: f0 };
    }
    EpsilonFit { epsilon: eps, bound: b, at_boundary, objective_at_zero: f0, objective_at_fit: fe }
}

pub fn fit_epsilon_growth(objective: &GrowthObjective, bound: f64) -> EpsilonFit {
    minimize_bounded(|e| -objective.value(e), bound, objective.sup_direction())
}

pub fn fit_epsilon_fecundity(objective: &FecundityObjective, bound: f64) -> EpsilonFit {
    minimize_bounded(|e| objective.value(e), bound, objective.sup_direction())
}
