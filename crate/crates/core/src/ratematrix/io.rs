//! Text formats for generators: a structured record (`n_states` plus
//! row-major `entries`) used in configs, and plain CSV with one matrix row
//! per line.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{validate, RateMatrix, RateMatrixError};

/// Serialized form of a [`RateMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateMatrixSpec {
    pub n_states: usize,
    pub entries: Vec<f64>,
}

impl TryFrom<RateMatrixSpec> for RateMatrix {
    type Error = RateMatrixError;

    fn try_from(spec: RateMatrixSpec) -> Result<Self, Self::Error> {
        let n = spec.n_states;
        if spec.entries.len() != n * n {
            return Err(RateMatrixError::DimensionMismatch { expected: n * n, found: spec.entries.len() });
        }
        validate(&DMatrix::from_row_slice(n, n, &spec.entries))
    }
}

impl From<RateMatrix> for RateMatrixSpec {
    fn from(q: RateMatrix) -> Self {
        Self { n_states: q.n_states(), entries: q.rows().into_iter().flatten().collect() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvMatrixError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {value:?} is not a number")]
    Parse { line: usize, value: String },
    #[error(transparent)]
    Invalid(#[from] RateMatrixError),
}

/// Reads a generator from CSV text, one row per line, no header.
pub fn from_csv_reader<R: Read>(reader: R) -> Result<RateMatrix, CsvMatrixError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| CsvMatrixError::Parse { line: line + 1, value: v.to_string() }))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(RateMatrix::from_rows(&rows)?)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<RateMatrix, CsvMatrixError> {
    from_csv_reader(std::fs::File::open(path)?)
}
