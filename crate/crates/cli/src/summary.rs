//! Per-replication rows and their Monte Carlo summaries.

use serde::{Deserialize, Serialize};

/// One iterate of one replication at one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub rep: u64,
    pub bandwidth: String,
    pub iteration: usize,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
    pub eps1: f64,
    pub eps2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub bandwidth: String,
    pub n_reps: usize,
    pub coverage: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

pub fn method_name(iteration: usize) -> String {
    if iteration == 0 {
        "initial".into()
    } else {
        format!("tmle-iter-{iteration}")
    }
}

/// Coverage, mean, bias, population sd and rmse.
pub fn describe(values: &[(f64, bool)], truth: f64) -> (f64, f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.0).sum::<f64>() / n;
    let coverage = values.iter().filter(|v| v.1).count() as f64 / n;
    let sd = (values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let rmse = (values.iter().map(|v| (v.0 - truth).powi(2)).sum::<f64>() / n).sqrt();
    (coverage, mean, mean - truth, sd, rmse)
}

/// Rows of one replication and bandwidth, as the iterate in force at each
/// `k = 0..=max_iterations`: a run that stopped early keeps its last iterate.
pub fn carried_forward<'a>(rows: &[&'a EstimateRow], max_iterations: usize) -> Vec<&'a EstimateRow> {
    (0..=max_iterations)
        .map(|k| *rows.iter().filter(|r| r.iteration <= k).max_by_key(|r| r.iteration).expect("iteration 0 present"))
        .collect()
}

/// Summary rows per bandwidth (in `labels` order) and method.
pub fn summarize(rows: &[EstimateRow], labels: &[String], max_iterations: usize, truth: f64) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for label in labels {
        let mut reps: Vec<u64> = rows.iter().filter(|r| &r.bandwidth == label).map(|r| r.rep).collect();
        reps.sort_unstable();
        reps.dedup();
        if reps.is_empty() {
            continue;
        }
        let per_rep: Vec<Vec<&EstimateRow>> = reps
            .iter()
            .map(|&rep| {
                let mine: Vec<&EstimateRow> =
                    rows.iter().filter(|r| r.rep == rep && &r.bandwidth == label).collect();
                carried_forward(&mine, max_iterations)
            })
            .collect();
        for k in 0..=max_iterations {
            let values: Vec<(f64, bool)> = per_rep.iter().map(|r| (r[k].estimate, r[k].covered)).collect();
            let (coverage, mean_estimate, bias, sd, rmse) = describe(&values, truth);
            out.push(SummaryRow {
                method: method_name(k),
                bandwidth: label.clone(),
                n_reps: values.len(),
                coverage,
                mean_estimate,
                bias,
                sd,
                rmse,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bandwidth: String,
    pub method: String,
    pub bin: usize,
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed.
pub fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts.into_iter().enumerate().map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c)).collect()
}

/// Initial and final-iterate histograms on a shared range per bandwidth.
pub fn histograms(rows: &[EstimateRow], labels: &[String], max_iterations: usize, bins: usize) -> Vec<HistogramRow> {
    let mut out = Vec::new();
    for label in labels {
        let mut reps: Vec<u64> = rows.iter().filter(|r| &r.bandwidth == label).map(|r| r.rep).collect();
        reps.sort_unstable();
        reps.dedup();
        let mut initial = Vec::new();
        let mut last = Vec::new();
        for &rep in &reps {
            let mine: Vec<&EstimateRow> = rows.iter().filter(|r| r.rep == rep && &r.bandwidth == label).collect();
            let carried = carried_forward(&mine, max_iterations);
            initial.push(carried[0].estimate);
            last.push(carried[max_iterations].estimate);
        }
        if initial.is_empty() {
            continue;
        }
        let all = initial.iter().chain(&last);
        let lo = all.clone().cloned().fold(f64::INFINITY, f64::min);
        let hi = all.cloned().fold(f64::NEG_INFINITY, f64::max);
        for (method, values) in [(method_name(0), &initial), (method_name(max_iterations), &last)] {
            for (bin, (bin_low, bin_high, count)) in bin_counts(values, lo, hi, bins).into_iter().enumerate() {
                out.push(HistogramRow { bandwidth: label.clone(), method: method.clone(), bin, bin_low, bin_high, count });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rep: u64, iteration: usize, estimate: f64) -> EstimateRow {
        EstimateRow {
            rep,
            bandwidth: "0.1".into(),
            iteration,
            estimate,
            se: 0.1,
            ci_low: estimate - 0.2,
            ci_high: estimate + 0.2,
            covered: (estimate - 1.0).abs() <= 0.2,
            eps1: 0.0,
            eps2: 0.0,
        }
    }

    #[test]
    fn rmse_decomposes() {
        let v = [(1.1, true), (0.7, false), (1.3, true), (0.95, true)];
        let (cov, mean, bias, sd, rmse) = describe(&v, 1.0);
        assert_eq!(cov, 0.75);
        assert!((mean - 1.0125).abs() < 1e-15);
        assert!((rmse * rmse - bias * bias - sd * sd).abs() < 1e-12);
    }

    #[test]
    fn early_stop_carries_the_last_iterate() {
        let rows = vec![row(0, 0, 1.5), row(0, 1, 1.1), row(1, 0, 0.9), row(1, 1, 1.0), row(1, 2, 1.05)];
        let s = summarize(&rows, &["0.1".into()], 3, 1.0);
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].method, "initial");
        assert!((s[0].mean_estimate - 1.2).abs() < 1e-15);
        assert!((s[3].mean_estimate - 1.075).abs() < 1e-15);
        assert_eq!(s[3].method, "tmle-iter-3");
    }

    #[test]
    fn bins_cover_every_value() {
        let b = bin_counts(&[0.0, 0.5, 1.0, 1.0], 0.0, 1.0, 4);
        assert_eq!(b.iter().map(|x| x.2).sum::<usize>(), 4);
        assert_eq!(b[3].2, 2);
        let flat = bin_counts(&[2.0, 2.0], 2.0, 2.0, 3);
        assert_eq!(flat[0].2, 2);
    }
}
