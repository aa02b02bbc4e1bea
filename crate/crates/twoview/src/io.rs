//! File formats: the correspondence CSV and the 3×3 matrix JSON document.
//!
//! CSV header is `x,y,xp,yp` with an optional `w` weight column and
//! optional `f1,f2,f3,f4` side-info columns, in that order. Matrix files
//! are JSON objects `{"rows":3,"cols":3,"data":[...]}` with row-major data.

use crate::geometry::{CorrespondenceSet, FundamentalMatrix, GeometryError, PointPair};
use crate::mat3::Mat3;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid matrix file: {0}")]
    BadMatrix(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy)]
struct CsvLayout {
    has_weight: bool,
    has_side_info: bool,
}

impl CsvLayout {
    fn from_header(header: &csv::StringRecord) -> Result<Self, FormatError> {
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        let layout = match cols.as_slice() {
            ["x", "y", "xp", "yp"] => Self { has_weight: false, has_side_info: false },
            ["x", "y", "xp", "yp", "w"] => Self { has_weight: true, has_side_info: false },
            ["x", "y", "xp", "yp", "f1", "f2", "f3", "f4"] => {
                Self { has_weight: false, has_side_info: true }
            }
            ["x", "y", "xp", "yp", "w", "f1", "f2", "f3", "f4"] => {
                Self { has_weight: true, has_side_info: true }
            }
            other => {
                return Err(FormatError::BadHeader(format!(
                    "expected x,y,xp,yp[,w][,f1,f2,f3,f4], got {}",
                    other.join(",")
                )))
            }
        };
        Ok(layout)
    }

    fn n_cols(&self) -> usize {
        4 + usize::from(self.has_weight) + if self.has_side_info { 4 } else { 0 }
    }
}

pub fn read_correspondences<R: Read>(reader: R) -> Result<CorrespondenceSet, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let layout = CsvLayout::from_header(rdr.headers()?)?;

    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    let mut side_info = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != layout.n_cols() {
            return Err(FormatError::Malformed {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    layout.n_cols(),
                    record.len()
                ),
            });
        }
        let field = |idx: usize| -> Result<f64, FormatError> {
            let raw = &record[idx];
            raw.parse::<f64>().map_err(|_| FormatError::Malformed {
                line,
                message: format!("field {} is not a number: {raw:?}", idx + 1),
            })
        };
        pairs.push(PointPair::new(
            [field(0)?, field(1)?],
            [field(2)?, field(3)?],
        ));
        let mut next = 4;
        if layout.has_weight {
            weights.push(field(next)?);
            next += 1;
        }
        if layout.has_side_info {
            side_info.push([field(next)?, field(next + 1)?, field(next + 2)?, field(next + 3)?]);
        }
    }

    let mut set = CorrespondenceSet::new(pairs)?;
    if layout.has_weight {
        set = set.with_weights(weights)?;
    }
    if layout.has_side_info {
        set = set.with_side_info(side_info)?;
    }
    Ok(set)
}

pub fn read_correspondences_file(path: &Path) -> Result<CorrespondenceSet, FormatError> {
    read_correspondences(std::fs::File::open(path)?)
}

pub fn write_correspondences<W: Write>(set: &CorrespondenceSet, writer: W) -> Result<(), FormatError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let has_weight = set.weights().is_some();
    let has_side_info = set.side_info().is_some();
    let mut header = vec!["x", "y", "xp", "yp"];
    if has_weight {
        header.push("w");
    }
    if has_side_info {
        header.extend(["f1", "f2", "f3", "f4"]);
    }
    wtr.write_record(&header)?;
    for (i, pair) in set.pairs().iter().enumerate() {
        let mut row: Vec<String> = vec![
            fmt_f64(pair.x[0]),
            fmt_f64(pair.x[1]),
            fmt_f64(pair.x_prime[0]),
            fmt_f64(pair.x_prime[1]),
        ];
        if let Some(w) = set.weights() {
            row.push(fmt_f64(w[i]));
        }
        if let Some(s) = set.side_info() {
            row.extend(s[i].iter().map(|v| fmt_f64(*v)));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest round-trip decimal representation, always with a '.' or exponent
/// so the column readably stays floating point.
fn fmt_f64(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn write_matrix_json<W: Write>(m: &Mat3, mut writer: W) -> Result<(), FormatError> {
    let doc = MatrixJson {
        rows: 3,
        cols: 3,
        data: m.iter().flatten().copied().collect(),
    };
    serde_json::to_writer(&mut writer, &doc)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn matrix_json_string(m: &Mat3) -> String {
    let mut buf = Vec::new();
    write_matrix_json(m, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_matrix_json<R: Read>(reader: R) -> Result<Mat3, FormatError> {
    let doc: MatrixJson = serde_json::from_reader(reader)?;
    if doc.rows != 3 || doc.cols != 3 {
        return Err(FormatError::BadMatrix(format!(
            "expected a 3x3 matrix, got {}x{}",
            doc.rows, doc.cols
        )));
    }
    if doc.data.len() != 9 {
        return Err(FormatError::BadMatrix(format!(
            "expected 9 data entries, got {}",
            doc.data.len()
        )));
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = doc.data[3 * i + j];
        }
    }
    Ok(m)
}

pub fn read_fundamental_file(path: &Path) -> Result<FundamentalMatrix, FormatError> {
    let m = read_matrix_json(std::fs::File::open(path)?)?;
    Ok(FundamentalMatrix::from_matrix(m)?)
}
