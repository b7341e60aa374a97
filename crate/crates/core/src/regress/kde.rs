//! Univariate Gaussian kernel density estimation.

use serde::{Deserialize, Serialize};

use crate::numeric::{normal_cdf, normal_pdf, splitmix64, LOG_FLOOR};

pub const DEFAULT_BANDWIDTHS: [f64; 5] = [0.01, 0.02, 0.03, 0.05, 0.1];

/// Kernels further than this many bandwidths away contribute below the
/// double-precision resolution of the density.
const DENSITY_WINDOW: f64 = 40.0;
const CDF_WINDOW: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeFit {
    /// Sorted sample.
    pub sample: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeFit {
    pub fn new(mut sample: Vec<f64>, bandwidth: f64) -> Self {
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        assert!(!sample.is_empty(), "KDE needs at least one sample point");
        sample.sort_by(|a, b| a.total_cmp(b));
        KdeFit { sample, bandwidth }
    }

    fn window(&self, x: f64, width: f64) -> (usize, usize) {
        let lo = self.sample.partition_point(|&s| s < x - width * self.bandwidth);
        let hi = self.sample.partition_point(|&s| s <= x + width * self.bandwidth);
        (lo, hi)
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let (lo, hi) = self.window(x, DENSITY_WINDOW);
        let s: f64 = self.sample[lo..hi].iter().map(|&si| normal_pdf((x - si) / h)).sum();
        s / (self.sample.len() as f64 * h)
    }

    /// Distribution function of the estimate, `(1/m) sum Phi((x - s_i)/h)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        let h = self.bandwidth;
        let (lo, hi) = self.window(x, CDF_WINDOW);
        let s: f64 = self.sample[lo..hi].iter().map(|&si| normal_cdf((x - si) / h)).sum();
        (lo as f64 + s) / self.sample.len() as f64
    }
}

pub fn kde_density(fit: &KdeFit, x: f64) -> f64 {
    fit.density(x)
}

/// Affine map of raw residuals onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualScale {
    pub offset: f64,
    pub range: f64,
}

impl ResidualScale {
    /// Scale fitted to the sample range; a constant sample keeps unit range.
    pub fn fit(residuals: &[f64]) -> Self {
        let lo = residuals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        ResidualScale { offset: lo, range }
    }

    pub fn to_unit(&self, r: f64) -> f64 {
        (r - self.offset) / self.range
    }

    pub fn from_unit(&self, s: f64) -> f64 {
        self.offset + self.range * s
    }
}

fn fold_of(x: f64, seed: u64, n_folds: usize) -> usize {
    (splitmix64(x.to_bits() ^ seed) % n_folds as u64) as usize
}

/// Mean held-out log density for each candidate bandwidth. Folds are
/// assigned by hashing the value, so repeated values share a fold.
pub fn cv_scores(sample: &[f64], candidates: &[f64], n_folds: usize, seed: u64) -> Vec<f64> {
    assert!(n_folds >= 2, "cross-validation needs at least two folds");
    let mut folds: Vec<Vec<f64>> = vec![Vec::new(); n_folds];
    for &x in sample {
        folds[fold_of(x, seed, n_folds)].push(x);
    }
    candidates
        .iter()
        .map(|&h| {
            let mut total = 0.0;
            let mut used = 0usize;
            for v in 0..n_folds {
                if folds[v].is_empty() {
                    continue;
                }
                let train: Vec<f64> = (0..n_folds).filter(|&k| k != v).flat_map(|k| folds[k].iter().copied()).collect();
                if train.is_empty() {
                    continue;
                }
                let fit = KdeFit::new(train, h);
                let ll: f64 = folds[v].iter().map(|&x| fit.density(x).max(LOG_FLOOR).ln()).sum();
                total += ll / folds[v].len() as f64;
                used += 1;
            }
            if used == 0 {
                f64::NEG_INFINITY
            } else {
                total / used as f64
            }
        })
        .collect()
}

/// Candidate with the best cross-validated log density; ties go to the
/// smaller bandwidth.
pub fn cv_bandwidth(sample: &[f64], candidates: &[f64], n_folds: usize, seed: u64) -> f64 {
    assert!(!candidates.is_empty(), "no bandwidth candidates");
    if candidates.len() == 1 {
        return candidates[0];
    }
    let scores = cv_scores(sample, candidates, n_folds, seed);
    let mut best = 0;
    for k in 1..candidates.len() {
        let better = scores[k] > scores[best];
        let tie_smaller = scores[k] == scores[best] && candidates[k] < candidates[best];
        if better || tie_smaller {
            best = k;
        }
    }
    candidates[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_at_zero() {
        let fit = KdeFit::new(vec![0.3], 0.1);
        assert!((fit.density(0.3) - 1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-12);
        assert!((fit.density(0.3) - 3.98942).abs() < 1e-5);
    }

    #[test]
    fn far_tail_is_negligible() {
        let fit = KdeFit::new(vec![0.0, 0.1], 0.01);
        assert!(fit.density(0.2) < 1e-20);
    }

    #[test]
    fn two_point_formula() {
        let fit = KdeFit::new(vec![0.0, 1.0], 0.5);
        let direct = 0.5 * (normal_pdf(1.0) / 0.5 + normal_pdf(-1.0) / 0.5);
        assert!((fit.density(0.5) - direct).abs() < 1e-15);
        assert!((fit.density(0.5) - 0.48394).abs() < 1e-5);
    }

    #[test]
    fn cdf_limits_and_symmetry() {
        let fit = KdeFit::new(vec![0.2, 0.4, 0.6], 0.05);
        assert!((fit.cdf(0.4) - 0.5).abs() < 1e-15);
        assert!(fit.cdf(-10.0) < 1e-300 + 1e-18);
        assert!((fit.cdf(10.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_candidate_is_returned() {
        assert_eq!(cv_bandwidth(&[0.1, 0.5, 0.9], &[0.07], 5, 1), 0.07);
    }

    #[test]
    fn residual_scale_round_trip() {
        let s = ResidualScale::fit(&[-0.2, 0.1, 0.3]);
        assert!((s.to_unit(-0.2)).abs() < 1e-15);
        assert!((s.to_unit(0.3) - 1.0).abs() < 1e-15);
        assert!((s.from_unit(s.to_unit(0.05)) - 0.05).abs() < 1e-15);
        let c = ResidualScale::fit(&[0.0, 0.0]);
        assert_eq!(c.range, 1.0);
    }
}
