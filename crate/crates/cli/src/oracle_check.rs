//! Closed-form influence functions against the finite-difference oracle.

use std::path::Path;

use ipm_tmle::demography::{dominant_eigs, is_primitive};
use ipm_tmle::influence::{gateaux_oracle, influence_tables, random_law, Functional};
use ipm_tmle::TargetKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{base_dir, output_dir, prepare_output, read_json, OracleConfig, Overrides};
use crate::error::{CliError, CliResult};
use crate::output::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub target: TargetKind,
    pub n_classes: usize,
    pub n_envs: usize,
    pub instances: usize,
    pub max_rel_error: f64,
    pub max_abs_mean: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error over the support and `|E psi|` for one instance.
pub fn instance_errors(kind: TargetKind, n: usize, n_envs: usize, step: f64, rng: &mut ChaCha8Rng) -> ipm_tmle::Result<(f64, f64)> {
    let law = loop {
        let law = random_law(rng, n, n_envs);
        if is_primitive(&law.to_model(None).kernel(None)) {
            break law;
        }
    };
    let model = law.to_model(None);
    let eig = dominant_eigs(&model.kernel(None))?;
    let tables = influence_tables(kind, &model, &eig)?;
    let (mut diff, mut scale, mut mean) = (0.0f64, 0.0f64, 0.0);
    for (atom, &p) in law.atoms.iter().zip(&law.probs) {
        let psi = tables.evaluate(&atom.observation()).psi_total;
        let oracle = gateaux_oracle(Functional::Target(kind), &law, atom, step)?.derivative;
        diff = diff.max((psi - oracle).abs());
        scale = scale.max(oracle.abs());
        mean += p * psi;
    }
    Ok((if scale > 0.0 { diff / scale } else { diff }, mean.abs()))
}

pub fn check(cfg: &OracleConfig) -> CliResult<Vec<OracleRow>> {
    if cfg.instances == 0 || cfg.class_counts.iter().any(|&n| n < 1) {
        return Err(CliError::Usage("oracle check needs instances >= 1 and class counts >= 1".into()));
    }
    let mut rows = Vec::new();
    for (t, &kind) in cfg.targets.iter().enumerate() {
        let n_envs = if kind == TargetKind::LogLambdaS { 2 } else { 1 };
        for &n in &cfg.class_counts {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((t as u64) << 32) | n as u64);
            let (mut rel, mut mean) = (0.0f64, 0.0f64);
            for _ in 0..cfg.instances {
                let (r, m) = instance_errors(kind, n, n_envs, cfg.step, &mut rng)?;
                rel = rel.max(r);
                mean = mean.max(m);
            }
            let tolerance = cfg.tolerance(kind);
            rows.push(OracleRow {
                target: kind,
                n_classes: n,
                n_envs,
                instances: cfg.instances,
                max_rel_error: rel,
                max_abs_mean: mean,
                tolerance,
                pass: rel < tolerance && mean < cfg.tol_mean,
            });
        }
    }
    Ok(rows)
}

pub fn render(rows: &[OracleRow]) -> String {
    let mut s = format!("{:<14}{:>4}{:>6}{:>11}{:>14}{:>14}{:>11}  status\n", "target", "N", "envs", "instances", "max rel err", "max |E psi|", "tol");
    for r in rows {
        s.push_str(&format!(
            "{:<14}{:>4}{:>6}{:>11}{:>14.3e}{:>14.3e}{:>11.0e}  {}\n",
            r.target.name(),
            r.n_classes,
            r.n_envs,
            r.instances,
            r.max_rel_error,
            r.max_abs_mean,
            r.tolerance,
            if r.pass { "ok" } else { "FAIL" }
        ));
    }
    s
}

/// Run the check, write `oracle.csv`, and fail with a numeric error when any
/// row exceeds its tolerance.
pub fn run(config_path: Option<&Path>, ov: &Overrides) -> CliResult<Vec<OracleRow>> {
    let (mut cfg, base) = match config_path {
        Some(p) => (read_json::<OracleConfig>(p)?, base_dir(p).to_path_buf()),
        None => (OracleConfig::default(), Path::new(".").to_path_buf()),
    };
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    let rows = check(&cfg)?;
    let out = output_dir(ov, cfg.output.as_deref(), &base, "out");
    prepare_output(&out)?;
    write_csv(&out.join("oracle.csv"), &rows, &[])?;
    Ok(rows)
}

pub fn all_pass(rows: &[OracleRow]) -> bool {
    rows.iter().all(|r| r.pass)
}
