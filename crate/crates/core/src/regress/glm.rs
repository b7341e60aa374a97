//! Generalized linear models with canonical links, fitted by iteratively
//! reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{Design, DesignInfo};
use crate::error::{IpmError, Result};
use crate::numeric::plogis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

const PROB_CAP: f64 = 1e-12;
const ETA_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy)]
pub struct GlmOptions {
    /// Relative deviance change at convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to the diagonal of X'WX.
    pub ridge: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        GlmOptions { tol: 1e-10, max_iter: 100, ridge: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    /// Intercept first when the design has one.
    pub coefficients: Vec<f64>,
    pub design_info: DesignInfo,
    pub converged: bool,
    pub n_iterations: usize,
    pub deviance: f64,
    pub warnings: Vec<String>,
}

impl Family {
    fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => plogis(eta).clamp(PROB_CAP, 1.0 - PROB_CAP),
            Family::Poisson => eta.exp(),
        }
    }

    fn cap_eta(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial | Family::Poisson => eta.clamp(-ETA_CAP, ETA_CAP),
        }
    }

    /// IRLS weight; equal to the variance function for canonical links.
    fn weight(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }

    fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Binomial => {
                let a = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                let b = if y < 1.0 { (1.0 - y) * ((1.0 - y) / (1.0 - mu)).ln() } else { 0.0 };
                2.0 * (a + b)
            }
            Family::Poisson => {
                let a = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                2.0 * (a - (y - mu))
            }
        }
    }

    fn initial_mu(self, y: f64) -> f64 {
        match self {
            Family::Gaussian => y,
            Family::Binomial => (y + 0.5) / 2.0,
            Family::Poisson => y + 0.1,
        }
    }

    fn link(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Binomial => (mu / (1.0 - mu)).ln(),
            Family::Poisson => mu.ln(),
        }
    }
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }

    /// Mean response for a design row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.family.inverse_link(self.family.cap_eta(self.linear_predictor(row)))
    }
}

fn validate(family: Family, y: &[f64], design: &Design) -> Result<()> {
    if design.n_rows != y.len() {
        return Err(IpmError::Config(format!("design has {} rows but {} responses", design.n_rows, y.len())));
    }
    if y.is_empty() {
        return Err(IpmError::NoRecords);
    }
    for (i, &v) in y.iter().enumerate() {
        let ok = match family {
            Family::Gaussian => v.is_finite(),
            Family::Binomial => v == 0.0 || v == 1.0,
            Family::Poisson => v >= 0.0 && v.fract() == 0.0,
        };
        if !ok {
            return Err(IpmError::Parse { row: i + 1, message: format!("invalid {family:?} response {v}") });
        }
    }
    Ok(())
}

/// Sequential Cholesky of X'X in column order; the first column whose
/// residual pivot falls below `1e-10` of its diagonal is collinear.
fn check_rank(design: &Design) -> Result<()> {
    let p = design.n_cols;
    let mut g = DMatrix::<f64>::zeros(p, p);
    for i in 0..design.n_rows {
        let r = design.row(i);
        for a in 0..p {
            for b in 0..=a {
                g[(a, b)] += r[a] * r[b];
            }
        }
    }
    let mut l = DMatrix::<f64>::zeros(p, p);
    for k in 0..p {
        let mut d = g[(k, k)];
        for m in 0..k {
            d -= l[(k, m)] * l[(k, m)];
        }
        if g[(k, k)] <= 0.0 || d <= 1e-10 * g[(k, k)] {
            return Err(IpmError::RankDeficient { column: design.info.names[k].clone() });
        }
        let dk = d.sqrt();
        l[(k, k)] = dk;
        for a in k + 1..p {
            let mut s = g[(a, k)];
            for m in 0..k {
                s -= l[(a, m)] * l[(k, m)];
            }
            l[(a, k)] = s / dk;
        }
    }
    Ok(())
}

fn weighted_solve(design: &Design, w: &[f64], z: &[f64], ridge: f64) -> Option<DVector<f64>> {
    let p = design.n_cols;
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwz = DVector::<f64>::zeros(p);
    for i in 0..design.n_rows {
        let r = design.row(i);
        let wi = w[i];
        for a in 0..p {
            let wa = wi * r[a];
            xtwz[a] += wa * z[i];
            for b in 0..=a {
                xtwx[(a, b)] += wa * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
        xtwx[(a, a)] += ridge;
    }
    xtwx.cholesky().map(|c| c.solve(&xtwz))
}

fn eta_of(design: &Design, beta: &DVector<f64>, family: Family) -> Vec<f64> {
    (0..design.n_rows)
        .map(|i| family.cap_eta(design.row(i).iter().zip(beta.iter()).map(|(x, b)| x * b).sum()))
        .collect()
}

fn deviance(family: Family, y: &[f64], mu: &[f64]) -> f64 {
    y.iter().zip(mu).map(|(&yi, &mi)| family.unit_deviance(yi, mi)).sum()
}

/// Maximum likelihood fit of a GLM with the canonical link.
pub fn fit_glm(family: Family, y: &[f64], design: &Design, opts: &GlmOptions) -> Result<GlmFit> {
    validate(family, y, design)?;
    check_rank(design)?;
    let n = y.len();
    let mut mu: Vec<f64> = y.iter().map(|&v| family.initial_mu(v)).collect();
    let mut eta: Vec<f64> = mu.iter().map(|&m| family.link(m)).collect();
    let mut dev = deviance(family, y, &mu);
    let mut beta = DVector::<f64>::zeros(design.n_cols);
    let mut converged = false;
    let mut iterations = 0;
    let mut warnings = Vec::new();

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let w: Vec<f64> = mu.iter().map(|&m| family.weight(m)).collect();
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]).collect();
        let Some(mut candidate) = weighted_solve(design, &w, &z, opts.ridge) else {
            warnings.push("weighted normal equations not positive definite".into());
            break;
        };
        let mut new_eta = eta_of(design, &candidate, family);
        let mut new_mu: Vec<f64> = new_eta.iter().map(|&e| family.inverse_link(e)).collect();
        let mut new_dev = deviance(family, y, &new_mu);
        if iter > 1 {
            let mut halvings = 0;
            while !(new_dev <= dev * (1.0 + 1e-12) + 1e-300) && halvings < 40 {
                candidate = (&candidate + &beta) * 0.5;
                new_eta = eta_of(design, &candidate, family);
                new_mu = new_eta.iter().map(|&e| family.inverse_link(e)).collect();
                new_dev = deviance(family, y, &new_mu);
                halvings += 1;
            }
        }
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        beta = candidate;
        eta = new_eta;
        mu = new_mu;
        dev = new_dev;
        if change < opts.tol && iter > 1 {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("IRLS did not converge in {} iterations", opts.max_iter));
    }
    // complete separation drives the deviance to zero or pins fitted values at the cap
    let pinned = mu.iter().any(|&m| m <= PROB_CAP * 1.000001 || m >= 1.0 - PROB_CAP * 1.000001);
    if family == Family::Binomial && (pinned || dev < 1e-6) {
        converged = false;
        warnings.push("fitted probabilities pinned at 0 or 1 (separation)".into());
    }
    Ok(GlmFit {
        family,
        coefficients: beta.iter().copied().collect(),
        design_info: design.info.clone(),
        converged,
        n_iterations: iterations,
        deviance: dev,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy_design(x: &[f64]) -> Design {
        let mut d = Design::new(vec!["(Intercept)".into(), "x".into()]);
        for &v in x {
            d.push_row(&[1.0, v]);
        }
        d
    }

    #[test]
    fn poisson_intercept_is_log_mean() {
        let fit = fit_glm(Family::Poisson, &[1.0, 3.0], &Design::intercept_only(2), &GlmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - 2f64.ln()).abs() < 1e-7);
    }

    #[test]
    fn binomial_intercept_half() {
        let fit = fit_glm(Family::Binomial, &[0.0, 1.0], &Design::intercept_only(2), &GlmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-7);
    }

    #[test]
    fn gaussian_exact_fit() {
        let x = [0.0, 1.0, 2.0, 3.5];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = fit_glm(Family::Gaussian, &y, &xy_design(&x), &GlmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-7);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-7);
        assert!(fit.deviance < 1e-12);
    }

    #[test]
    fn separation_is_flagged() {
        let x = [-2.0, -1.0, 1.0, 2.0];
        let y = [0.0, 0.0, 1.0, 1.0];
        let fit = fit_glm(Family::Binomial, &y, &xy_design(&x), &GlmOptions::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.warnings.iter().any(|w| w.contains("separation")));
        assert!(fit.predict(&[1.0, 2.0]) <= 1.0 - 1e-12);
    }

    #[test]
    fn collinear_column_is_named() {
        let mut d = Design::new(vec!["(Intercept)".into(), "x".into(), "x2".into()]);
        for v in [1.0, 2.0, 3.0] {
            d.push_row(&[1.0, v, 2.0 * v]);
        }
        let err = fit_glm(Family::Gaussian, &[1.0, 2.0, 3.0], &d, &GlmOptions::default()).unwrap_err();
        assert!(err.to_string().contains("`x2`"));
    }

    #[test]
    fn invalid_responses_rejected() {
        let d = Design::intercept_only(2);
        assert!(fit_glm(Family::Binomial, &[0.0, 2.0], &d, &GlmOptions::default()).is_err());
        assert!(fit_glm(Family::Poisson, &[-1.0, 2.0], &d, &GlmOptions::default()).is_err());
    }
}
