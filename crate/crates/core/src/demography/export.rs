//! Matrix export for heatmaps: CSV with a `j\i` header and a JSON form.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;

/// Rows are destination classes `j`, columns source classes `i`, both 1-based.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["j\\i".to_string()];
    header.extend((1..=m.ncols()).map(|i| i.to_string()));
    w.write_record(&header)?;
    for j in 0..m.nrows() {
        let mut row = vec![(j + 1).to_string()];
        row.extend((0..m.ncols()).map(|i| format!("{}", m[(j, i)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MatrixJson<'a> {
    label: &'a str,
    rows: usize,
    cols: usize,
    /// Row-major values.
    data: Vec<f64>,
}

pub fn matrix_json(label: &str, m: &DMatrix<f64>) -> serde_json::Value {
    let data = (0..m.nrows()).flat_map(|j| (0..m.ncols()).map(move |i| m[(j, i)])).collect();
    serde_json::to_value(MatrixJson { label, rows: m.nrows(), cols: m.ncols(), data }).expect("matrix serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "j\\i,1,2\n1,1,2\n2,3,4.5\n");
        let j = matrix_json("K", &m);
        assert_eq!(j["data"][3], 4.5);
    }
}
