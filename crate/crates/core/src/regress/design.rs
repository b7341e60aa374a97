use serde::{Deserialize, Serialize};

/// Treatment coding of a categorical variable restricted to the levels seen
/// in training. The lowest present level is the baseline; levels absent from
/// training map to the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCoding {
    pub name: String,
    pub baseline: usize,
    /// Level index for each indicator column, in column order.
    pub levels: Vec<usize>,
}

impl FactorCoding {
    pub fn from_codes(name: &str, codes: &[usize]) -> Self {
        let mut present: Vec<usize> = codes.to_vec();
        present.sort_unstable();
        present.dedup();
        let baseline = present.first().copied().unwrap_or(0);
        FactorCoding { name: name.to_string(), baseline, levels: present.into_iter().skip(1).collect() }
    }

    pub fn n_columns(&self) -> usize {
        self.levels.len()
    }

    pub fn is_known(&self, code: usize) -> bool {
        code == self.baseline || self.levels.contains(&code)
    }

    /// Append the indicator columns for `code` to `row`.
    pub fn push_indicators(&self, code: usize, row: &mut Vec<f64>) {
        row.extend(self.levels.iter().map(|&l| if l == code { 1.0 } else { 0.0 }));
    }

    pub fn column_names(&self, labels: &[String]) -> Vec<String> {
        self.levels
            .iter()
            .map(|&l| format!("{}{}", self.name, labels.get(l).cloned().unwrap_or_else(|| l.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignInfo {
    pub names: Vec<String>,
    pub factors: Vec<FactorCoding>,
}

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
    pub info: DesignInfo,
}

impl Design {
    pub fn new(names: Vec<String>) -> Self {
        let n_cols = names.len();
        Design { n_rows: 0, n_cols, data: Vec::new(), info: DesignInfo { names, factors: Vec::new() } }
    }

    pub fn with_factor(mut self, factor: FactorCoding) -> Self {
        self.info.factors.push(factor);
        self
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row length does not match design columns");
        self.data.extend_from_slice(row);
        self.n_rows += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Single-column intercept design.
    pub fn intercept_only(n: usize) -> Self {
        let mut d = Design::new(vec!["(Intercept)".into()]);
        for _ in 0..n {
            d.push_row(&[1.0]);
        }
        d
    }
}
