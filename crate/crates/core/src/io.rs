//! CSV ingestion, rescaling to the unit cube and run metadata.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::TrainingSet;
use crate::rjmcmc::{McmcConfig, MoveTallies};

/// Per-axis affine map between the original input box and `[0, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    /// The bounding box of `points`. A constant axis gets unit width.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(Error::InsufficientData { n: 0, required: 1 })?;
        let mut lower = first.clone();
        let mut upper = first.clone();
        for p in points {
            check_dim(lower.len(), p.len())?;
            for j in 0..p.len() {
                lower[j] = lower[j].min(p[j]);
                upper[j] = upper[j].max(p[j]);
            }
        }
        for j in 0..lower.len() {
            if upper[j] <= lower[j] {
                upper[j] = lower[j] + 1.0;
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.lower[j]) / (self.upper[j] - self.lower[j]))
            .collect()
    }

    pub fn unscale(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, v)| self.lower[j] + v * (self.upper[j] - self.lower[j]))
            .collect()
    }

    /// Scales and checks the result lies in the unit cube (with a little
    /// rounding slack, then clamped).
    pub fn scale_checked(&self, x: &[f64], index: usize) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let u = self.scale(x);
        if u.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
            return Err(Error::OutOfDomain { index });
        }
        Ok(u.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Raw training table: input columns then the output column.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Parses a headed numeric CSV. Errors name the file row (header = row 1)
/// and column of the offending cell.
pub fn read_numeric_csv<R: Read>(reader: R) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if columns.is_empty() || columns.iter().any(String::is_empty) {
        return Err(Error::MalformedCsv {
            row: 1,
            column: String::new(),
            message: "missing or empty header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedCsv {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let values = record
            .iter()
            .zip(&columns)
            .map(|(cell, col)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::MalformedCsv {
                    row,
                    column: col.clone(),
                    message: format!("expected a finite number, found {cell:?}"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok(CsvTable { columns, rows })
}

/// Training data as read from disk, before rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct RawData {
    pub input_names: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl RawData {
    pub fn dim(&self) -> usize {
        self.input_names.len()
    }

    /// Rescales inputs into `[0, 1]^d` with the given bounds.
    pub fn to_training_set(&self, bounds: &Bounds) -> Result<TrainingSet> {
        let scaled = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, x)| bounds.scale_checked(x, i))
            .collect::<Result<Vec<_>>>()?;
        TrainingSet::new(scaled, self.outputs.clone())
    }
}

/// Reads `x1,..,xd,y` training data: every column but the last is an input.
pub fn read_training_csv<R: Read>(reader: R) -> Result<RawData> {
    let table = read_numeric_csv(reader)?;
    if table.columns.len() < 2 {
        return Err(Error::MalformedCsv {
            row: 1,
            column: String::new(),
            message: "need at least one input column and one output column".into(),
        });
    }
    let d = table.columns.len() - 1;
    let (inputs, outputs) = table.rows.into_iter().map(|mut r| {
        let y = r.pop().expect("row width checked by the reader");
        (r, y)
    }).unzip();
    Ok(RawData {
        input_names: table.columns[..d].to_vec(),
        inputs,
        outputs,
    })
}

/// Reads query points; extra columns beyond the first `d` are ignored.
pub fn read_points_csv<R: Read>(reader: R, d: usize) -> Result<Vec<Vec<f64>>> {
    let table = read_numeric_csv(reader)?;
    if table.columns.len() < d {
        return Err(Error::MalformedCsv {
            row: 1,
            column: String::new(),
            message: format!("expected at least {d} columns"),
        });
    }
    Ok(table.rows.into_iter().map(|mut r| {
        r.truncate(d);
        r
    }).collect())
}

pub fn write_points_csv<W: Write>(w: W, names: &[String], points: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(names)?;
    for p in points {
        out.write_record(p.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Everything needed to interpret a stored chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub input_names: Vec<String>,
    pub bounds: Bounds,
    pub n_points: usize,
    pub seed: u64,
    pub config: McmcConfig,
    pub tallies: MoveTallies,
}
