//! Records, size grids and CSV ingestion.
//!
//! The input table has one row per individual and census interval: starting
//! size, survival, next size and offspring counts per destination class.
//! Offspring may also arrive in long format, one row per recruit naming its
//! parent.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: String,
    pub z_continuous: f64,
    /// Continuous size at the next census; `None` for deaths.
    pub z_next_continuous: Option<f64>,
    /// 1-based class.
    pub z_class: usize,
    pub survived: bool,
    /// 1-based class at the next census, `0` iff the individual died.
    pub z_next_class: usize,
    /// Sparse offspring counts keyed by 1-based destination class.
    pub offspring: BTreeMap<usize, u32>,
    pub env_label: Option<String>,
    pub covariates: Vec<f64>,
}

impl IndividualRecord {
    pub fn total_offspring(&self) -> u64 {
        self.offspring.values().map(|&c| c as u64).sum()
    }
}

/// Maps continuous size to classes `1..=n_classes`.
///
/// With a seedling class, class 1 is `z <= 0` and the remaining classes
/// split the positive sizes. A value equal to a split point belongs to the
/// lower class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeGrid {
    pub n_classes: usize,
    pub split_points: Vec<f64>,
    pub has_seedling_class: bool,
    /// Range used to give the open end classes finite midpoints.
    pub lower: f64,
    pub upper: f64,
}

impl SizeGrid {
    /// Grid from explicit split points (sorted and deduplicated here).
    pub fn from_splits(mut splits: Vec<f64>, has_seedling_class: bool, lower: f64, upper: f64) -> Self {
        splits.sort_by(|a, b| a.total_cmp(b));
        splits.dedup();
        if has_seedling_class {
            splits.retain(|&s| s > 0.0);
        }
        let n_classes = splits.len() + 1 + has_seedling_class as usize;
        SizeGrid { n_classes, split_points: splits, has_seedling_class, lower, upper }
    }

    /// `n` equal-width classes on `[lower, upper]`.
    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        let splits = (1..n).map(|k| lower + (upper - lower) * k as f64 / n as f64).collect();
        SizeGrid::from_splits(splits, false, lower, upper)
    }

    fn offset(&self) -> usize {
        self.has_seedling_class as usize
    }

    /// Interval `(lo, hi]` of a 1-based class; end classes are unbounded.
    pub fn class_bounds(&self, class: usize) -> (f64, f64) {
        if self.has_seedling_class && class == 1 {
            return (f64::NEG_INFINITY, 0.0);
        }
        let idx = class - 1 - self.offset();
        let lo = if idx == 0 {
            if self.has_seedling_class {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            self.split_points[idx - 1]
        };
        let hi = if idx >= self.split_points.len() { f64::INFINITY } else { self.split_points[idx] };
        (lo, hi)
    }

    /// Representative size of a class, with the open ends clipped to the grid range.
    pub fn midpoint(&self, class: usize) -> f64 {
        if self.has_seedling_class && class == 1 {
            return 0.0;
        }
        let (lo, hi) = self.class_bounds(class);
        0.5 * (lo.max(self.lower) + hi.min(self.upper))
    }

    /// Finite class boundaries `c_0 < c_1 < ... < c_N` with `c_0 = -inf`, `c_N = +inf`.
    pub fn cut_points(&self) -> Vec<f64> {
        let mut cuts = Vec::with_capacity(self.n_classes + 1);
        cuts.push(f64::NEG_INFINITY);
        if self.has_seedling_class {
            cuts.push(0.0);
        }
        cuts.extend_from_slice(&self.split_points);
        cuts.push(f64::INFINITY);
        cuts
    }
}

/// Sample-quantile grid: splits are the type-1 `k/N` quantiles.
pub fn build_quantile_grid(values: &[f64], n_classes: usize) -> Result<SizeGrid> {
    if n_classes < 2 {
        return Err(IpmError::Config(format!("n_classes must be at least 2, got {n_classes}")));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(IpmError::Config("grid values must be finite".into()));
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < n_classes {
        return Err(IpmError::GridDegenerate { distinct: distinct.len(), classes: n_classes });
    }
    let n_zero = sorted.iter().filter(|&&v| v <= 0.0).count();
    let seedling = n_zero > 0 && n_zero < sorted.len();
    let positive: &[f64] = if seedling { &sorted[n_zero..] } else { &sorted };
    let m = n_classes - seedling as usize;
    let len = positive.len();
    let top = positive[len - 1];
    let mut splits: Vec<f64> = (1..m)
        .map(|k| positive[(k * len).div_ceil(m) - 1])
        .filter(|&s| s < top)
        .collect();
    splits.dedup();
    let lower = sorted[0].min(0.0);
    Ok(SizeGrid::from_splits(splits, seedling, lower, sorted[sorted.len() - 1]))
}

/// 1-based class of `z`; never fails, clamps into `1..=N`.
pub fn discretize(z: f64, grid: &SizeGrid) -> usize {
    if grid.has_seedling_class && z <= 0.0 {
        return 1;
    }
    let below = grid.split_points.partition_point(|&s| s < z);
    (grid.offset() + 1 + below).clamp(1, grid.n_classes)
}

/// Compact, 0-based view of a record used by the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// 0-based source class.
    pub z: usize,
    /// `0` for death, otherwise the 1-based destination class.
    pub z_star: usize,
    /// Nonzero offspring counts keyed by 0-based destination class.
    pub y: Vec<(usize, f64)>,
    pub env: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<IndividualRecord>,
    pub grid: SizeGrid,
    pub env_levels: Vec<String>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        records: Vec<IndividualRecord>,
        grid: SizeGrid,
        env_levels: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(IpmError::NoRecords);
        }
        let with_env = records.iter().filter(|r| r.env_label.is_some()).count();
        if with_env != 0 && with_env != records.len() {
            return Err(IpmError::Config("env_label must be present for all records or for none".into()));
        }
        let n = grid.n_classes;
        for (k, r) in records.iter().enumerate() {
            let bad_class = r.z_class < 1 || r.z_class > n || r.z_next_class > n;
            let bad_survival = r.survived != (r.z_next_class != 0);
            let bad_offspring = r.offspring.keys().any(|&j| j < 1 || j > n);
            if bad_class || bad_survival || bad_offspring {
                return Err(IpmError::Parse { row: k + 1, message: "record violates class invariants".into() });
            }
            if r.covariates.len() != covariate_names.len() {
                return Err(IpmError::Parse { row: k + 1, message: "covariate count mismatch".into() });
            }
            if let Some(label) = &r.env_label {
                if !env_levels.contains(label) {
                    return Err(IpmError::Parse { row: k + 1, message: format!("unknown environment `{label}`") });
                }
            }
        }
        Ok(Dataset { records, grid, env_levels, covariate_names })
    }

    pub fn n_classes(&self) -> usize {
        self.grid.n_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_env(&self) -> bool {
        !self.env_levels.is_empty()
    }

    /// Number of environments, `1` when the data carry no environment label.
    pub fn n_envs(&self) -> usize {
        self.env_levels.len().max(1)
    }

    pub fn env_index(&self, record: &IndividualRecord) -> usize {
        match &record.env_label {
            Some(label) => self.env_levels.iter().position(|l| l == label).unwrap_or(0),
            None => 0,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            grid: self.grid.clone(),
            env_levels: self.env_levels.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn observation(&self, record: &IndividualRecord) -> Observation {
        Observation {
            z: record.z_class - 1,
            z_star: record.z_next_class,
            y: record.offspring.iter().filter(|(_, &c)| c > 0).map(|(&j, &c)| (j - 1, c as f64)).collect(),
            env: self.env_index(record),
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.records.iter().map(|r| self.observation(r)).collect()
    }

    /// Empirical environment frequencies (a single weight of 1 without environments).
    pub fn env_weights(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_envs()];
        for r in &self.records {
            counts[self.env_index(r)] += 1.0;
        }
        let n = self.records.len() as f64;
        counts.iter().map(|c| c / n).collect()
    }
}

/// Long-format offspring file: one row per recruit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecruitsConfig {
    pub path: PathBuf,
    #[serde(default = "default_parent_column")]
    pub parent_column: String,
    /// Column holding the recruit's 1-based class.
    #[serde(default)]
    pub class_column: Option<String>,
    /// Column holding the recruit's continuous size, discretized on the grid.
    #[serde(default)]
    pub size_column: Option<String>,
}

fn default_parent_column() -> String {
    "parent_id".into()
}

/// Column naming for [`read_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub id: String,
    pub z_t: String,
    pub survived: String,
    pub z_next: String,
    pub offspring_prefix: String,
    pub env: Option<String>,
    pub covariates: Vec<String>,
    pub n_classes: usize,
    /// When set, `z_t` and `z_next` hold 1-based class labels on this many
    /// classes rather than continuous sizes.
    pub discrete_classes: Option<usize>,
    pub recruits: Option<RecruitsConfig>,
    pub grid: Option<SizeGrid>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            id: "id".into(),
            z_t: "z_t".into(),
            survived: "s".into(),
            z_next: "z_next".into(),
            offspring_prefix: "y_".into(),
            env: None,
            covariates: Vec::new(),
            n_classes: 100,
            discrete_classes: None,
            recruits: None,
            grid: None,
        }
    }
}

pub fn read_dataset(path: &Path, schema: &SchemaConfig) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut schema = schema.clone();
    if let Some(rec) = schema.recruits.as_mut() {
        if rec.path.is_relative() {
            if let Some(dir) = path.parent() {
                rec.path = dir.join(&rec.path);
            }
        }
    }
    read_dataset_from(file, &schema)
}

struct RawRow {
    id: String,
    z: f64,
    s: bool,
    z_next: Option<f64>,
    offspring: BTreeMap<usize, u32>,
    env: Option<String>,
    covariates: Vec<f64>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| IpmError::MissingColumn(name.to_string()))
}

fn parse_f64(field: &str, row: usize, name: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| IpmError::Parse { row, message: format!("column `{name}`: cannot parse `{field}` as a number") })
}

fn parse_count(field: &str, row: usize, name: &str) -> Result<u32> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(0);
    }
    let v: f64 = parse_f64(t, row, name)?;
    if v < 0.0 {
        return Err(IpmError::Parse { row, message: format!("column `{name}`: negative offspring count {t}") });
    }
    if v.fract() != 0.0 {
        return Err(IpmError::Parse { row, message: format!("column `{name}`: non-integer offspring count {t}") });
    }
    Ok(v as u32)
}

/// Read a dataset from any CSV source. Long-format recruits, if configured,
/// are read from `schema.recruits.path`.
pub fn read_dataset_from<R: Read>(reader: R, schema: &SchemaConfig) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_id = column(&headers, &schema.id)?;
    let c_z = column(&headers, &schema.z_t)?;
    let c_s = column(&headers, &schema.survived)?;
    let c_next = column(&headers, &schema.z_next)?;
    let c_env = schema.env.as_deref().map(|e| column(&headers, e)).transpose()?;
    let c_cov: Vec<usize> = schema.covariates.iter().map(|c| column(&headers, c)).collect::<Result<_>>()?;
    let y_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(k, h)| {
            h.trim().strip_prefix(schema.offspring_prefix.as_str()).and_then(|s| s.parse::<usize>().ok()).map(|j| (k, j))
        })
        .collect();

    let mut raw = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let s = match rec[c_s].trim() {
            "1" | "1.0" | "TRUE" | "true" => true,
            "0" | "0.0" | "FALSE" | "false" => false,
            other => {
                return Err(IpmError::Parse { row, message: format!("column `{}`: non-binary value `{other}`", schema.survived) })
            }
        };
        let z = parse_f64(&rec[c_z], row, &schema.z_t)?;
        let next_field = rec[c_next].trim();
        let z_next = if s {
            if next_field.is_empty() || next_field.eq_ignore_ascii_case("na") {
                return Err(IpmError::Parse { row, message: format!("column `{}`: missing for a survivor", schema.z_next) });
            }
            Some(parse_f64(next_field, row, &schema.z_next)?)
        } else {
            None
        };
        let mut offspring = BTreeMap::new();
        for &(col, j) in &y_cols {
            let c = parse_count(&rec[col], row, &headers[col])?;
            if c > 0 {
                offspring.insert(j, c);
            }
        }
        let env = c_env.map(|c| rec[c].trim().to_string());
        if let Some(e) = &env {
            if e.is_empty() {
                return Err(IpmError::Parse { row, message: "missing environment label".into() });
            }
        }
        let covariates = c_cov
            .iter()
            .zip(&schema.covariates)
            .map(|(&c, name)| parse_f64(&rec[c], row, name))
            .collect::<Result<Vec<_>>>()?;
        raw.push(RawRow { id: rec[c_id].trim().to_string(), z, s, z_next, offspring, env, covariates });
    }
    if raw.is_empty() {
        return Err(IpmError::NoRecords);
    }

    let grid = match (&schema.grid, schema.discrete_classes) {
        (Some(g), _) => g.clone(),
        (None, Some(n)) => SizeGrid::uniform(n, 0.0, 1.0),
        (None, None) => {
            let zs: Vec<f64> = raw.iter().map(|r| r.z).collect();
            build_quantile_grid(&zs, schema.n_classes)?
        }
    };
    let n = grid.n_classes;

    if let Some(rc) = &schema.recruits {
        attach_recruits(&mut raw, rc, &grid, schema.discrete_classes.is_some())?;
    }

    let mut env_levels: Vec<String> = raw.iter().filter_map(|r| r.env.clone()).collect();
    env_levels.sort();
    env_levels.dedup();

    let mut records = Vec::with_capacity(raw.len());
    for (k, r) in raw.into_iter().enumerate() {
        let row = k + 1;
        let (z_cont, z_class, z_next_cont, z_next_class) = match schema.discrete_classes {
            Some(_) => {
                let zc = class_label(r.z, row, n, 1)?;
                let zn = match r.z_next {
                    Some(v) => class_label(v, row, n, 1)?,
                    None => 0,
                };
                let mid = |c: usize| (c as f64 - 0.5) / n as f64;
                (mid(zc), zc, (zn > 0).then(|| mid(zn)), zn)
            }
            None => {
                let zn = r.z_next.map(|v| discretize(v, &grid)).unwrap_or(0);
                (r.z, discretize(r.z, &grid), r.z_next, zn)
            }
        };
        if let Some((&j, _)) = r.offspring.iter().find(|(&j, _)| j < 1 || j > n) {
            return Err(IpmError::Parse { row, message: format!("offspring class {j} outside 1..={n}") });
        }
        records.push(IndividualRecord {
            id: r.id,
            z_continuous: z_cont,
            z_next_continuous: z_next_cont,
            z_class,
            survived: r.s,
            z_next_class,
            offspring: r.offspring,
            env_label: r.env,
            covariates: r.covariates,
        });
    }
    Dataset::new(records, grid, env_levels, schema.covariates.clone())
}

fn class_label(v: f64, row: usize, n: usize, min: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < min as f64 || v > n as f64 {
        return Err(IpmError::Parse { row, message: format!("class label {v} outside {min}..={n}") });
    }
    Ok(v as usize)
}

fn attach_recruits(raw: &mut [RawRow], rc: &RecruitsConfig, grid: &SizeGrid, discrete: bool) -> Result<()> {
    let mut rdr = csv::Reader::from_path(&rc.path)?;
    let headers = rdr.headers()?.clone();
    let c_parent = column(&headers, &rc.parent_column)?;
    let c_class = rc.class_column.as_deref().map(|c| column(&headers, c)).transpose()?;
    let c_size = rc.size_column.as_deref().map(|c| column(&headers, c)).transpose()?;
    if c_class.is_none() && c_size.is_none() {
        return Err(IpmError::Config("recruits file needs a class_column or a size_column".into()));
    }
    let index: HashMap<String, usize> = raw.iter().enumerate().map(|(k, r)| (r.id.clone(), k)).collect();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let parent = rec[c_parent].trim();
        let &p = index
            .get(parent)
            .ok_or_else(|| IpmError::Parse { row, message: format!("recruit names unknown parent `{parent}`") })?;
        let class = match (c_class, c_size) {
            (Some(c), _) => class_label(parse_f64(&rec[c], row, "class")?, row, grid.n_classes, 1)?,
            (None, Some(c)) => {
                let z = parse_f64(&rec[c], row, "size")?;
                if discrete {
                    class_label(z, row, grid.n_classes, 1)?
                } else {
                    discretize(z, grid)
                }
            }
            (None, None) => unreachable!(),
        };
        *raw[p].offspring.entry(class).or_insert(0) += 1;
    }
    Ok(())
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Write a dataset in the wide schema read by [`read_dataset`], with the
/// class columns appended.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = dataset.n_classes();
    let mut header: Vec<String> =
        ["id", "z_t", "s", "z_next", "z_class", "z_next_class"].iter().map(|s| s.to_string()).collect();
    if dataset.has_env() {
        header.push("year".into());
    }
    header.extend(dataset.covariate_names.iter().cloned());
    header.extend((1..=n).map(|j| format!("y_{j}")));
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![
            r.id.clone(),
            fmt_f64(r.z_continuous),
            (r.survived as u8).to_string(),
            r.z_next_continuous.map(fmt_f64).unwrap_or_default(),
            r.z_class.to_string(),
            r.z_next_class.to_string(),
        ];
        if dataset.has_env() {
            row.push(r.env_label.clone().unwrap_or_default());
        }
        row.extend(r.covariates.iter().map(|&c| fmt_f64(c)));
        row.extend((1..=n).map(|j| r.offspring.get(&j).copied().unwrap_or(0).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
