//! Write one simulated replication in the tabular schema.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ipm_tmle::data::write_dataset;
use ipm_tmle::{SimSpec, TargetKind};
use serde::Serialize;

use crate::config::{base_dir, output_dir, prepare_output, ExperimentConfig, Overrides};
use crate::error::{CliError, CliResult};
use crate::output::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedTruth {
    pub design: String,
    pub n: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub rep: u64,
    pub truth: BTreeMap<String, f64>,
}

/// A bare simulation spec, or an experiment config's simulation.
pub fn load_spec(path: &Path, ov: &Overrides) -> CliResult<SimSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut spec = match SimSpec::from_json(&text) {
        Ok(s) => s,
        Err(first) => {
            let exp: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|_| CliError::Usage(format!("{}: {first}", path.display())))?;
            let mut spec = exp.simulation.load(base_dir(path))?;
            if let Some(n) = exp.n {
                spec.n = n;
            }
            if let Some(s) = exp.seed {
                spec.seed = s;
            }
            spec
        }
    };
    if let Some(s) = ov.seed {
        spec.seed = s;
    }
    Ok(spec)
}

pub fn run(config_path: &Path, rep: u64, ov: &Overrides) -> CliResult<PathBuf> {
    let spec = load_spec(config_path, ov)?;
    let data = spec.generate(rep)?;
    let out = output_dir(ov, None, base_dir(config_path), "out");
    prepare_output(&out)?;
    let path = out.join("data.csv");
    write_dataset(&data, BufWriter::new(File::create(&path)?))?;
    let mut truth = BTreeMap::new();
    for kind in [TargetKind::Lambda, TargetKind::Elasticity, TargetKind::LogLambdaS] {
        if let Ok(v) = spec.truth(kind) {
            truth.insert(kind.name().to_string(), v);
        }
    }
    write_json(
        &out.join("truth.json"),
        &GeneratedTruth {
            design: spec.design.name().into(),
            n: spec.n,
            n_classes: data.n_classes(),
            seed: spec.seed,
            rep,
            truth,
        },
    )?;
    Ok(path)
}
