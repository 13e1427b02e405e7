//! Streaming access to delimited input tables.
//!
//! Pass 1 scans the file once for row counts, group labels, and a reservoir
//! sample of the coordinates. Passes 2 and 3 re-read it in fixed-size blocks.
//! Rows with non-finite values in bound columns are rejected (counted, never
//! used); malformed rows abort with their line number.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct TableSchema {
    pub path: PathBuf,
    pub delimiter: u8,
    /// Column index of the response; absent for prediction tables.
    pub response: Option<usize>,
    pub coord_x: usize,
    pub coord_y: usize,
    /// Numeric X columns: (name, column index, is intercept slot). The
    /// intercept has no file column.
    pub x_cols: Vec<XColumn>,
    pub group: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum XColumn {
    Intercept,
    File { name: String, index: usize },
}

impl TableSchema {
    pub fn x_names(&self) -> Vec<String> {
        self.x_cols
            .iter()
            .map(|c| match c {
                XColumn::Intercept => "(intercept)".to_string(),
                XColumn::File { name, .. } => name.clone(),
            })
            .collect()
    }

    /// Resolves the configured column names against the file header.
    pub fn resolve(
        path: &Path,
        delimiter: u8,
        response: Option<&str>,
        coord_x: &str,
        coord_y: &str,
        intercept: bool,
        x_names: &[String],
        group: Option<&str>,
    ) -> Result<TableSchema, CliError> {
        let mut reader = open_reader(path, delimiter)?;
        let headers = reader
            .headers()
            .map_err(|e| CliError::Data(format!("cannot read header of {}: {e}", path.display())))?
            .clone();
        let find = |name: &str| -> Result<usize, CliError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "column '{name}' not found in {} (header: {})",
                        path.display(),
                        headers.iter().collect::<Vec<_>>().join(",")
                    ))
                })
        };
        let mut x_cols = Vec::new();
        if intercept {
            x_cols.push(XColumn::Intercept);
        }
        for name in x_names {
            x_cols.push(XColumn::File {
                name: name.clone(),
                index: find(name)?,
            });
        }
        Ok(TableSchema {
            path: path.to_path_buf(),
            delimiter,
            response: response.map(find).transpose()?,
            coord_x: find(coord_x)?,
            coord_y: find(coord_y)?,
            x_cols,
            group: group.map(find).transpose()?,
        })
    }
}

fn open_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub labels: BTreeSet<String>,
    /// Uniform sample of accepted coordinates (reservoir algorithm, seeded).
    pub reservoir: Vec<[f64; 2]>,
}

/// One parsed row; `None` when the row is rejected for non-finite values.
struct ParsedRow {
    coords: [f64; 2],
    x: Vec<f64>,
    y: f64,
    label: Option<String>,
}

fn parse_row(
    record: &csv::StringRecord,
    schema: &TableSchema,
    line: u64,
) -> Result<Option<ParsedRow>, CliError> {
    let field = |idx: usize| -> Result<&str, CliError> {
        record.get(idx).ok_or_else(|| {
            CliError::Data(format!(
                "line {line}: row has {} fields, column {idx} is out of range",
                record.len()
            ))
        })
    };
    let number = |idx: usize| -> Result<f64, CliError> {
        let raw = field(idx)?.trim();
        raw.parse::<f64>().map_err(|_| {
            CliError::Data(format!("line {line}: cannot parse '{raw}' as a number"))
        })
    };
    let cx = number(schema.coord_x)?;
    let cy = number(schema.coord_y)?;
    let y = match schema.response {
        Some(idx) => number(idx)?,
        None => 0.0,
    };
    let mut x = Vec::with_capacity(schema.x_cols.len());
    for col in &schema.x_cols {
        x.push(match col {
            XColumn::Intercept => 1.0,
            XColumn::File { index, .. } => number(*index)?,
        });
    }
    if !cx.is_finite() || !cy.is_finite() || !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let label = schema
        .group
        .map(|idx| field(idx).map(|s| s.trim().to_string()))
        .transpose()?;
    Ok(Some(ParsedRow {
        coords: [cx, cy],
        x,
        y,
        label,
    }))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Pass 1: count rows, collect labels, reservoir-sample coordinates.
pub fn scan(schema: &TableSchema, reservoir_cap: usize, seed: u64) -> Result<ScanResult, CliError> {
    let mut reader = open_reader(&schema.path, schema.delimiter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7265_7376_7273_6d70);
    let mut out = ScanResult {
        n_accepted: 0,
        n_rejected: 0,
        labels: BTreeSet::new(),
        reservoir: Vec::with_capacity(reservoir_cap.min(1 << 20)),
    };
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::Data(format!("malformed row: {e}")))?;
        let line = line_of(&record);
        match parse_row(&record, schema, line)? {
            None => out.n_rejected += 1,
            Some(row) => {
                if let Some(label) = &row.label {
                    if !out.labels.contains(label) {
                        out.labels.insert(label.clone());
                    }
                }
                if out.reservoir.len() < reservoir_cap {
                    out.reservoir.push(row.coords);
                } else {
                    let j = rng.random_range(0..=out.n_accepted);
                    if j < reservoir_cap {
                        out.reservoir[j] = row.coords;
                    }
                }
                out.n_accepted += 1;
            }
        }
    }
    if out.n_accepted == 0 {
        return Err(CliError::Data(format!(
            "{}: no usable rows ({} rejected for non-finite values)",
            schema.path.display(),
            out.n_rejected
        )));
    }
    Ok(out)
}

/// One block of accepted rows.
#[derive(Debug, Clone)]
pub struct Block {
    /// 1-based file line number per row.
    pub lines: Vec<u64>,
    pub coords: Vec<[f64; 2]>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub labels: Option<Vec<String>>,
}

impl Block {
    pub fn rows(&self) -> usize {
        self.coords.len()
    }
}

/// Passes 2/3: streams accepted rows in blocks of at most `block_rows`.
pub struct BlockReader {
    reader: csv::Reader<std::fs::File>,
    schema: TableSchema,
    block_rows: usize,
    done: bool,
}

impl BlockReader {
    pub fn open(schema: &TableSchema, block_rows: usize) -> Result<Self, CliError> {
        Ok(Self {
            reader: open_reader(&schema.path, schema.delimiter)?,
            schema: schema.clone(),
            block_rows,
            done: false,
        })
    }
}

impl Iterator for BlockReader {
    type Item = Result<Block, CliError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let k = self.schema.x_cols.len();
        let with_labels = self.schema.group.is_some();
        let mut lines = Vec::with_capacity(self.block_rows);
        let mut coords = Vec::with_capacity(self.block_rows);
        let mut x_rows: Vec<f64> = Vec::with_capacity(self.block_rows * k);
        let mut y = Vec::with_capacity(self.block_rows);
        let mut labels: Vec<String> = Vec::new();

        while coords.len() < self.block_rows {
            let mut record = csv::StringRecord::new();
            match self.reader.read_record(&mut record) {
                Ok(false) => {
                    self.done = true;
                    break;
                }
                Ok(true) => {}
                Err(e) => return Some(Err(CliError::Data(format!("malformed row: {e}")))),
            }
            let line = line_of(&record);
            match parse_row(&record, &self.schema, line) {
                Err(e) => return Some(Err(e)),
                Ok(None) => continue,
                Ok(Some(row)) => {
                    lines.push(line);
                    coords.push(row.coords);
                    x_rows.extend_from_slice(&row.x);
                    y.push(row.y);
                    if with_labels {
                        labels.push(row.label.unwrap_or_default());
                    }
                }
            }
        }
        if coords.is_empty() {
            return None;
        }
        let n = coords.len();
        Some(Ok(Block {
            lines,
            coords,
            x: DMatrix::from_row_slice(n, k, &x_rows),
            y: DVector::from_vec(y),
            labels: with_labels.then_some(labels),
        }))
    }
}
