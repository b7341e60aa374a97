//! Exponential-family submodels through the current fit.

use crate::demography::DemographicModel;
use crate::influence::InfluenceTables;

/// `p_j exp(eps phi_j) / sum_k p_k exp(eps phi_k)`, written in place.
pub fn tilt_row(p: &mut [f64], phi: &[f64], eps: f64) {
    if eps == 0.0 {
        return;
    }
    let m = p
        .iter()
        .zip(phi)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(_, &f)| eps * f)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (pk, &f) in p.iter_mut().zip(phi) {
        if *pk > 0.0 {
            *pk *= (eps * f - m).exp();
        }
        s += *pk;
    }
    for pk in p.iter_mut() {
        *pk /= s;
    }
}

/// Tilt every transition row by the growth-space influence cells.
pub fn tilt_growth(model: &DemographicModel, tables: &InfluenceTables, eps: f64) -> DemographicModel {
    let mut out = model.clone();
    if eps == 0.0 {
        return out;
    }
    let n = model.n_classes;
    for (law, phi) in out.envs.iter_mut().zip(&tables.growth) {
        for i in 0..n {
            let mut row: Vec<f64> = (0..=n).map(|j| law.trans[(i, j)]).collect();
            let f: Vec<f64> = (0..=n).map(|j| phi[(i, j)]).collect();
            tilt_row(&mut row, &f, eps);
            for (j, v) in row.into_iter().enumerate() {
                law.trans[(i, j)] = v;
            }
        }
    }
    out
}

/// `Q_j(i) <- Q_j(i) exp(eps H_j(i))`.
pub fn tilt_fecundity(model: &DemographicModel, tables: &InfluenceTables, eps: f64) -> DemographicModel {
    let mut out = model.clone();
    if eps == 0.0 {
        return out;
    }
    for (law, h) in out.envs.iter_mut().zip(&tables.clever) {
        law.fecundity.zip_apply(h, |q, hv| *q *= (eps * hv).exp());
    }
    out
}
