//! File formats: frames as JSON, matrices from CSV or inline JSON, grid
//! functions as a raw little-endian f64 array plus a JSON header.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::KalmanFrame;
use crate::solver::{GridFunction, GridSpec};

/// JSON document describing a frame: {N, kappa, n, Q, A0}, matrices
/// row-major.
#[derive(Debug, Serialize, Deserialize)]
pub struct FrameDocument {
    #[serde(rename = "N")]
    pub n: usize,
    pub kappa: usize,
    #[serde(rename = "n")]
    pub subspace_dims: Vec<usize>,
    #[serde(rename = "Q")]
    pub basis: Vec<f64>,
    #[serde(rename = "A0")]
    pub principal_part: Vec<f64>,
}

pub fn frame_to_document(frame: &KalmanFrame<f64>) -> FrameDocument {
    FrameDocument {
        n: frame.dim,
        kappa: frame.kappa,
        subspace_dims: frame.subspace_dims.clone(),
        basis: row_major(&frame.basis),
        principal_part: row_major(&frame.principal_part),
    }
}

pub fn frame_from_document(doc: &FrameDocument) -> Result<KalmanFrame<f64>> {
    let n = doc.n;
    if doc.subspace_dims.len() != doc.kappa + 1 {
        return Err(Error::InvalidInput(
            "frame document: n[] must have kappa+1 entries".into(),
        ));
    }
    if doc.subspace_dims.iter().sum::<usize>() != n {
        return Err(Error::InvalidInput(
            "frame document: stratum dimensions must sum to N".into(),
        ));
    }
    let basis = from_row_major(&doc.basis, n, n)?;
    let principal_part = from_row_major(&doc.principal_part, n, n)?;
    // Rebuild projections from the basis blocks and check orthogonality.
    let qtq = basis.transpose() * &basis;
    if crate::linalg::op_norm(&(&qtq - DMatrix::<f64>::identity(n, n))) > 1e-8 {
        return Err(Error::InvalidInput(
            "frame document: basis is not orthogonal".into(),
        ));
    }
    let mut projections = Vec::with_capacity(doc.kappa + 1);
    let mut offset = 0;
    for &nj in &doc.subspace_dims {
        let block = basis.columns(offset, nj);
        projections.push(&block * block.transpose());
        offset += nj;
    }
    Ok(KalmanFrame {
        dim: n,
        kappa: doc.kappa,
        subspace_dims: doc.subspace_dims.clone(),
        basis,
        projections,
        principal_part,
    })
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::InvalidInput(format!(
            "expected {}x{} = {} entries, got {}",
            rows,
            cols,
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

/// JSON form of a space-time point.
#[derive(Debug, Serialize, Deserialize)]
pub struct PointDocument {
    pub t: f64,
    pub x: Vec<f64>,
}

pub fn point_to_document(p: &crate::scaling::SpaceTimePoint<f64>) -> PointDocument {
    PointDocument {
        t: p.t,
        x: p.x.iter().cloned().collect(),
    }
}

pub fn point_from_document(doc: &PointDocument) -> crate::scaling::SpaceTimePoint<f64> {
    crate::scaling::SpaceTimePoint::new(doc.t, nalgebra::DVector::from_vec(doc.x.clone()))
}

/// Parse a matrix from CSV text: one row per line, comma-separated.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect();
        let row = row.map_err(|e| {
            Error::InvalidInput(format!("csv parse error on line {}: {e}", lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidInput(format!(
                    "csv row {} has {} entries, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("csv matrix is empty".into()));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_csv(&text)
}

/// Parse a matrix from inline JSON (array of arrays).
pub fn parse_matrix_json(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InvalidInput("json matrix is empty".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput("json matrix rows are ragged".into()));
    }
    let nrows = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InvalidInput("matrix is empty".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput("matrix rows are ragged".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Header of a stored grid function.
#[derive(Debug, Serialize, Deserialize)]
pub struct FieldHeader {
    /// Value-array dimensions: [time slices, nodes axis 0, nodes axis 1, ...].
    pub dims: Vec<usize>,
    pub extents: Vec<(f64, f64)>,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub strata: Vec<usize>,
    /// Storage order marker; always time-major, row-major over axes.
    pub order: String,
}

/// Write a grid function as `<path>` (raw little-endian f64) plus
/// `<path>.json` (header).
pub fn save_field(field: &GridFunction<f64>, path: &Path) -> Result<()> {
    let spec = &field.spec;
    let mut dims = vec![spec.time_steps + 1];
    dims.extend((0..spec.dim()).map(|axis| spec.nodes(axis)));
    let header = FieldHeader {
        dims,
        extents: spec.bounds.clone(),
        t0: spec.t0,
        t1: spec.t1,
        dt: spec.dt(),
        strata: spec.strata.clone(),
        order: "time-major".into(),
    };
    let mut bin = std::fs::File::create(path)?;
    for v in &field.values {
        bin.write_all(&v.to_le_bytes())?;
    }
    let header_path = json_header_path(path);
    std::fs::write(&header_path, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn json_header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Load a grid function stored by [`save_field`].
pub fn load_field(path: &Path) -> Result<GridFunction<f64>> {
    let header: FieldHeader =
        serde_json::from_str(&std::fs::read_to_string(json_header_path(path))?)?;
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidInput("field payload is not f64 aligned".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected: usize = header.dims.iter().product();
    if values.len() != expected {
        return Err(Error::InvalidInput(format!(
            "field payload has {} values, header promises {}",
            values.len(),
            expected
        )));
    }
    if header.dims.len() < 2 {
        return Err(Error::InvalidInput("field header needs time + space dims".into()));
    }
    let time_steps = header.dims[0] - 1;
    let cells: Vec<usize> = header.dims[1..].iter().map(|&n| n - 1).collect();
    let spec = GridSpec {
        bounds: header.extents.clone(),
        cells,
        t0: header.t0,
        t1: header.t1,
        time_steps,
        strata: header.strata.clone(),
    };
    Ok(GridFunction { spec, values })
}

/// Write rows of f64 values as CSV with a header line.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
