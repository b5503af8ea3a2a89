//! Matrix CSV files for ensembles, oracle moments and plot grids.

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};

/// One row per record; values use the shortest round-trip representation.
pub fn rows_to_csv<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    Ok(w.into_inner()?)
}

pub fn csv_to_rows(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(rec.iter().map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>()?);
    }
    if let Some(w) = out.first().map(|r| r.len()) {
        if out.iter().any(|r| r.len() != w) {
            bail!("ragged matrix file");
        }
    }
    Ok(out)
}

pub fn vectors_to_csv(vs: &[DVector<f64>]) -> Result<Vec<u8>> {
    rows_to_csv(vs.iter().map(|v| v.as_slice()))
}

pub fn csv_to_vectors(bytes: &[u8]) -> Result<Vec<DVector<f64>>> {
    Ok(csv_to_rows(bytes)?.into_iter().map(DVector::from_vec).collect())
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows_to_csv(rows.iter().map(|r| r.as_slice()))
}

pub fn csv_to_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let rows = csv_to_rows(bytes)?;
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Row-major field values as a `height x width` grid.
pub fn field_grid_csv(width: usize, values: &[f64]) -> Result<Vec<u8>> {
    rows_to_csv(values.chunks(width))
}
