//! CSV ingestion: typed datasets of knot invariants with explicit missingness.
//!
//! Columns are kind-inferred from their cells (overridable via hints), boolean
//! flags become 0/1, and polynomial cells are parsed into Laurent polynomials.
//! Preprocessing for the two learning tasks lives here too: zero-target
//! removal for regression, label shifting for classification.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::polynomial::{parse_polynomial, LaurentPolynomial};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("cell at column {column:?}, row {row} cannot be parsed as {kind}: {cell:?}")]
    UnparseableCell {
        column: String,
        row: usize,
        kind: InvariantKind,
        cell: String,
    },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {0:?} is not numeric")]
    NonNumericTarget(String),
    #[error("column {0:?} is not integer-valued")]
    NonIntegerTarget(String),
    #[error("bad schema hint line {line}: {detail}")]
    BadHint { line: usize, detail: String },
}

/// What a column's cells mean. Every schema column has exactly one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantKind {
    IntegerClass,
    RealValue,
    BooleanFlag,
    PolynomialVector,
    Text,
}

impl InvariantKind {
    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            Self::IntegerClass | Self::RealValue | Self::BooleanFlag
        )
    }

    pub fn is_integer(self) -> bool {
        matches!(self, Self::IntegerClass | Self::BooleanFlag)
    }

    fn parse_name(s: &str) -> Option<Self> {
        match s {
            "integer_class" => Some(Self::IntegerClass),
            "real_value" => Some(Self::RealValue),
            "boolean_flag" => Some(Self::BooleanFlag),
            "polynomial_vector" => Some(Self::PolynomialVector),
            "text" => Some(Self::Text),
            _ => None,
        }
    }
}

impl fmt::Display for InvariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::IntegerClass => "integer_class",
            Self::RealValue => "real_value",
            Self::BooleanFlag => "boolean_flag",
            Self::PolynomialVector => "polynomial_vector",
            Self::Text => "text",
        };
        f.write_str(name)
    }
}

/// One typed cell value. Boolean flags are stored as 0/1 integers.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Poly(LaurentPolynomial),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_poly(&self) -> Option<&LaurentPolynomial> {
        match self {
            Value::Poly(p) => Some(p),
            _ => None,
        }
    }

    fn to_cell(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Real(r) => r.to_string(),
            Value::Poly(p) => p.to_cell(),
            Value::Text(t) => t.clone(),
        }
    }
}

/// One knot: an identifier plus schema-indexed optional values.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotRecord {
    pub knot_id: String,
    values: Vec<Option<Value>>,
}

impl KnotRecord {
    pub fn get(&self, column_index: usize) -> Option<&Value> {
        self.values.get(column_index).and_then(|v| v.as_ref())
    }
}

/// Ingest configuration: which cells count as missing, plus kind overrides.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub missing_markers: Vec<String>,
    pub kind_hints: BTreeMap<String, InvariantKind>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            missing_markers: ["", "Not Available", "N/A"]
                .into_iter()
                .map(str::to_string)
                .collect(),
            kind_hints: BTreeMap::new(),
        }
    }
}

impl IngestOptions {
    /// Loads hints from a file of `column=kind` lines (blank lines and
    /// `#` comments ignored).
    pub fn with_hints_file(mut self, path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::UnreadableFile {
            path: path.display().to_string(),
            source: e,
        })?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (col, kind) = line.split_once('=').ok_or(IngestError::BadHint {
                line: i + 1,
                detail: "expected column=kind".into(),
            })?;
            let kind = InvariantKind::parse_name(kind.trim()).ok_or(IngestError::BadHint {
                line: i + 1,
                detail: format!("unknown kind {:?}", kind.trim()),
            })?;
            self.kind_hints.insert(col.trim().to_string(), kind);
        }
        Ok(self)
    }

    fn is_missing(&self, cell: &str) -> bool {
        self.missing_markers.iter().any(|m| m == cell)
    }
}

/// An immutable typed table of knot invariants.
///
/// The schema is shared between derived datasets (filtering clones records,
/// not column metadata).
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Arc<Vec<(String, InvariantKind)>>,
    records: Vec<KnotRecord>,
    provenance: String,
}

impl Dataset {
    pub fn schema(&self) -> &[(String, InvariantKind)] {
        &self.schema
    }

    pub fn records(&self) -> &[KnotRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn column_index(&self, name: &str) -> Result<usize, IngestError> {
        self.schema
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| IngestError::UnknownColumn(name.to_string()))
    }

    pub fn kind(&self, name: &str) -> Result<InvariantKind, IngestError> {
        Ok(self.schema[self.column_index(name)?].1)
    }

    /// Typed value of `column` in record `row`, if present.
    pub fn value(&self, row: usize, column_index: usize) -> Option<&Value> {
        self.records[row].get(column_index)
    }

    fn with_records(&self, records: Vec<KnotRecord>) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            records,
            provenance: self.provenance.clone(),
        }
    }

    /// Sub-dataset of records where every named column is present.
    /// Record order is preserved; an empty column list is a no-op.
    pub fn complete_rows(&self, columns: &[&str]) -> Result<Dataset, IngestError> {
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| self.column_index(c))
            .collect::<Result<_, _>>()?;
        let records = self
            .records
            .iter()
            .filter(|r| idx.iter().all(|&i| r.get(i).is_some()))
            .cloned()
            .collect();
        Ok(self.with_records(records))
    }

    /// Drops records whose target is exactly zero, so relative error is
    /// always defined for regression scoring.
    pub fn preprocess_output_regression(&self, target: &str) -> Result<Dataset, IngestError> {
        let i = self.column_index(target)?;
        if !self.schema[i].1.is_numeric() {
            return Err(IngestError::NonNumericTarget(target.to_string()));
        }
        let records = self
            .records
            .iter()
            .filter(|r| match r.get(i).and_then(Value::as_f64) {
                Some(v) => v != 0.0,
                None => true, // missing is handled by complete_rows, not here
            })
            .cloned()
            .collect();
        Ok(self.with_records(records))
    }

    /// Shifts integer targets so the smallest observed value becomes label 0.
    /// Returns the offset (the original minimum); prediction + offset maps
    /// labels back to invariant values.
    pub fn preprocess_output_classification(
        &self,
        target: &str,
    ) -> Result<(Dataset, i64), IngestError> {
        let i = self.column_index(target)?;
        if !self.schema[i].1.is_integer() {
            return Err(IngestError::NonIntegerTarget(target.to_string()));
        }
        let min = self
            .records
            .iter()
            .filter_map(|r| r.get(i).and_then(Value::as_i64))
            .min()
            .unwrap_or(0);
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(Value::Int(v)) = &mut r.values[i] {
                    *v -= min;
                }
                r
            })
            .collect();
        Ok((self.with_records(records), min))
    }

    /// Serializes back to CSV. Present cells render their typed value
    /// (numbers at full round-trip precision, polynomials in canonical
    /// cell form); absent cells are empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.schema.iter().map(|(n, _)| n.as_str()))
            .expect("in-memory write");
        for r in &self.records {
            let cells: Vec<String> = r
                .values
                .iter()
                .map(|v| v.as_ref().map(Value::to_cell).unwrap_or_default())
                .collect();
            w.write_record(&cells).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

/// Reads a CSV with a header row into a typed dataset using default options.
pub fn ingest_csv(path: &Path) -> Result<Dataset, IngestError> {
    ingest_csv_with(path, &IngestOptions::default())
}

pub fn ingest_csv_with(path: &Path, options: &IngestOptions) -> Result<Dataset, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::UnreadableFile {
        path: path.display().to_string(),
        source: e,
    })?;
    ingest_csv_text(&text, &path.display().to_string(), options)
}

pub fn ingest_csv_text(
    text: &str,
    provenance: &str,
    options: &IngestOptions,
) -> Result<Dataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            row: 0,
            detail: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::MalformedRow {
            row: i + 1,
            detail: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(IngestError::MalformedRow {
                row: i + 1,
                detail: format!("{} cells, expected {}", rec.len(), header.len()),
            });
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }

    let schema: Vec<(String, InvariantKind)> = header
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let kind = options.kind_hints.get(name).copied().unwrap_or_else(|| {
                infer_kind(rows.iter().map(|r| r[c].as_str()), options)
            });
            (name.clone(), kind)
        })
        .collect();

    let id_column = header.iter().position(|h| h == "name");
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut values = Vec::with_capacity(row.len());
        for (c, cell) in row.iter().enumerate() {
            values.push(parse_cell(cell, schema[c].1, options).map_err(|_| {
                IngestError::UnparseableCell {
                    column: schema[c].0.clone(),
                    row: i + 1,
                    kind: schema[c].1,
                    cell: cell.clone(),
                }
            })?);
        }
        let knot_id = id_column
            .map(|c| row[c].clone())
            .unwrap_or_else(|| format!("row_{}", i + 1));
        records.push(KnotRecord { knot_id, values });
    }

    Ok(Dataset {
        schema: Arc::new(schema),
        records,
        provenance: provenance.to_string(),
    })
}

fn parse_bool(cell: &str) -> Option<i64> {
    match cell.to_ascii_lowercase().as_str() {
        "y" | "yes" => Some(1),
        "n" | "no" => Some(0),
        _ => None,
    }
}

/// Infers a column kind from its non-missing cells: all yes/no markers →
/// boolean, all bracketed → polynomial, all integers → integer class, all
/// numeric → real, anything else → text. All-missing columns default to text.
fn infer_kind<'a>(cells: impl Iterator<Item = &'a str>, options: &IngestOptions) -> InvariantKind {
    let mut seen = false;
    let (mut boolean, mut poly, mut int, mut real) = (true, true, true, true);
    for cell in cells {
        let cell = cell.trim();
        if options.is_missing(cell) {
            continue;
        }
        seen = true;
        boolean &= parse_bool(cell).is_some();
        poly &= cell.starts_with('[');
        int &= cell.parse::<i64>().is_ok();
        real &= cell.parse::<f64>().is_ok();
        if !(boolean || poly || int || real) {
            return InvariantKind::Text;
        }
    }
    match (seen, boolean, poly, int, real) {
        (false, ..) => InvariantKind::Text,
        (_, true, ..) => InvariantKind::BooleanFlag,
        (_, _, true, ..) => InvariantKind::PolynomialVector,
        (_, _, _, true, _) => InvariantKind::IntegerClass,
        (_, _, _, _, true) => InvariantKind::RealValue,
        _ => InvariantKind::Text,
    }
}

fn parse_cell(
    cell: &str,
    kind: InvariantKind,
    options: &IngestOptions,
) -> Result<Option<Value>, ()> {
    let cell = cell.trim();
    if options.is_missing(cell) {
        return Ok(None);
    }
    let value = match kind {
        InvariantKind::BooleanFlag => Value::Int(parse_bool(cell).ok_or(())?),
        InvariantKind::IntegerClass => Value::Int(cell.parse().map_err(|_| ())?),
        InvariantKind::RealValue => Value::Real(cell.parse().map_err(|_| ())?),
        InvariantKind::PolynomialVector => Value::Poly(parse_polynomial(cell).map_err(|_| ())?),
        InvariantKind::Text => Value::Text(cell.to_string()),
    };
    Ok(Some(value))
}
