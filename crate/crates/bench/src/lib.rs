//! Fixtures shared by the benchmarks.

use ipm_tmle::{Dataset, FitConfig, SimSpec};

/// One replication of the basic design.
pub fn basic_data(n: usize, n_classes: usize) -> Dataset {
    SimSpec::basic(n, n_classes, 515).generate(0).expect("basic design generates")
}

/// Fit settings matching the basic design's single environment.
pub fn basic_fit(bandwidth: f64) -> FitConfig {
    FitConfig {
        bandwidth: ipm_tmle::demography::BandwidthPolicy::Fixed(bandwidth),
        env_effects: false,
        separate_seedling_survival: false,
        ..Default::default()
    }
}
