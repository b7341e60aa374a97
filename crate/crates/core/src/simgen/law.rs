//! Continuous-size vital rates of one environment, used both to draw records
//! and to build the exact class-level law on a grid.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::SizeGrid;
use crate::demography::EnvLaw;
use crate::numeric::{beta_cdf, beta_quantile, gauss_legendre, plogis};

/// `Z = 0` with probability `seedling_prob`, otherwise `Beta(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeLaw {
    pub seedling_prob: f64,
    pub a: f64,
    pub b: f64,
}

impl SizeLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.seedling_prob {
            0.0
        } else {
            Beta::new(self.a, self.b).expect("valid beta").sample(rng)
        }
    }

    /// Grid from the population quantiles: a zero class when seedlings have
    /// positive mass, and equal-probability classes for the Beta part.
    pub fn quantile_grid(&self, n_classes: usize) -> SizeGrid {
        let seedling = self.seedling_prob > 0.0;
        let m = if seedling { n_classes - 1 } else { n_classes };
        let splits = (1..m).map(|k| beta_quantile(self.a, self.b, k as f64 / m as f64)).collect();
        SizeGrid::from_splits(splits, seedling, 0.0, 1.0)
    }
}

/// Vital rates of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRates {
    pub size: SizeLaw,
    /// `z' = intercept + slope z + shift + scale Beta(a, b)` among survivors.
    pub growth_intercept: f64,
    pub growth_slope: f64,
    pub resid_shift: f64,
    pub resid_scale: f64,
    pub resid_a: f64,
    pub resid_b: f64,
    /// Survival logit for `z = 0` records.
    pub surv_seedling_eta: f64,
    /// Survival logit `intercept + slope z` for `z > 0`.
    pub surv_intercept: f64,
    pub surv_slope: f64,
    /// Expected offspring `exp(fec_eta + fec_slope z)`.
    pub fec_eta: f64,
    pub fec_slope: f64,
    pub seedlings_reproduce: bool,
    /// Class distribution of recruits, length `N`.
    pub recruit_probs: Vec<f64>,
}

impl EnvRates {
    pub fn survival(&self, z: f64) -> f64 {
        if z <= 0.0 {
            plogis(self.surv_seedling_eta)
        } else {
            plogis(self.surv_intercept + self.surv_slope * z)
        }
    }

    pub fn offspring_rate(&self, z: f64) -> f64 {
        if z <= 0.0 && !self.seedlings_reproduce {
            0.0
        } else {
            (self.fec_eta + self.fec_slope * z).exp()
        }
    }

    fn growth_mean(&self, z: f64) -> f64 {
        self.growth_intercept + self.growth_slope * z + self.resid_shift
    }

    pub fn sample_next<R: Rng>(&self, z: f64, rng: &mut R) -> f64 {
        let r: f64 = Beta::new(self.resid_a, self.resid_b).expect("valid beta").sample(rng);
        self.growth_mean(z) + self.resid_scale * r
    }

    /// `P(z' <= x | z, survived)`.
    pub fn growth_cdf(&self, z: f64, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        beta_cdf(self.resid_a, self.resid_b, (x - self.growth_mean(z)) / self.resid_scale)
    }

    /// Exact class-level law on `grid`: conditional expectations over the
    /// size density within each class by Gauss-Legendre quadrature.
    pub fn class_law(&self, grid: &SizeGrid, nodes: usize) -> EnvLaw {
        let n = grid.n_classes;
        let rule = gauss_legendre(nodes);
        let cuts = grid.cut_points();
        let mut trans = DMatrix::zeros(n, n + 1);
        let mut fec = DMatrix::zeros(n, n);
        let mut marginal = vec![0.0; n];
        for i in 0..n {
            let class = i + 1;
            // (node, weight) pairs for E[. | Z in class]
            let points: Vec<(f64, f64)> = if grid.has_seedling_class && class == 1 {
                vec![(0.0, 1.0)]
            } else {
                let (lo, hi) = grid.class_bounds(class);
                let (lo, hi) = (lo.max(0.0), hi.min(1.0));
                let pdf = |z: f64| beta_pdf(self.size.a, self.size.b, z);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                let raw: Vec<(f64, f64)> =
                    rule.0.iter().zip(&rule.1).map(|(&x, &w)| (mid + half * x, half * w * pdf(mid + half * x))).collect();
                let mass: f64 = raw.iter().map(|(_, w)| w).sum();
                raw.into_iter().map(|(z, w)| (z, w / mass)).collect()
            };
            marginal[i] = if grid.has_seedling_class && class == 1 {
                self.size.seedling_prob
            } else {
                let (lo, hi) = grid.class_bounds(class);
                (1.0 - self.size.seedling_prob) * (beta_cdf(self.size.a, self.size.b, hi) - beta_cdf(self.size.a, self.size.b, lo))
            };
            let mut alive = 0.0;
            let mut rate = 0.0;
            for &(z, w) in &points {
                let s = self.survival(z);
                let cdf: Vec<f64> = cuts.iter().map(|&c| self.growth_cdf(z, c)).collect();
                for j in 0..n {
                    trans[(i, j + 1)] += w * s * (cdf[j + 1] - cdf[j]);
                }
                alive += w * s;
                rate += w * self.offspring_rate(z);
            }
            trans[(i, 0)] = 1.0 - alive;
            for j in 0..n {
                fec[(j, i)] = rate * self.recruit_probs[j];
            }
        }
        EnvLaw::new(trans, fec, marginal)
    }
}

fn beta_pdf(a: f64, b: f64, z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        return 0.0;
    }
    let ln_b = libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
    ((a - 1.0) * z.ln() + (b - 1.0) * (1.0 - z).ln() - ln_b).exp()
}
