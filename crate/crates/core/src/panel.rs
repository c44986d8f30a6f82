//! Yield panels: ingestion, validation and sample moments.
//!
//! A panel is a `T × N` matrix with one row per period (year) and one column
//! per field. On disk it is a UTF-8 CSV with a header row; the first column
//! may be named `period` and then holds the period labels. Empty cells and
//! `NaN` mark missing values.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, symmetrize_upper};

const PERIOD_COLUMN: &str = "period";

/// What to do with a field that has at least one missing value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Remove the whole field (column).
    #[default]
    Drop,
    /// Refuse the panel.
    Fail,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub missing: MissingPolicy,
}

/// Side information produced while loading a panel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    /// Fields removed because they had missing cells.
    pub dropped_fields: Vec<String>,
    /// Fields kept but constant over all periods. They carry no variance and
    /// are reported with an undefined per-field R².
    pub constant_fields: Vec<String>,
}

/// A validated `T × N` yield panel.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldPanel {
    values: DMatrix<f64>,
    field_ids: Vec<String>,
    period_ids: Vec<String>,
}

impl YieldPanel {
    pub fn new(
        values: DMatrix<f64>,
        field_ids: Vec<String>,
        period_ids: Vec<String>,
    ) -> Result<Self> {
        let (t, n) = values.shape();
        if field_ids.len() != n || period_ids.len() != t {
            return Err(Error::InvalidPanel(format!(
                "labels do not match a {t}x{n} matrix ({} periods, {} fields)",
                period_ids.len(),
                field_ids.len()
            )));
        }
        if t < 2 {
            return Err(Error::InvalidPanel(format!("need at least 2 periods, got {t}")));
        }
        if n < 2 {
            return Err(Error::InvalidPanel(format!("need at least 2 fields, got {n}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!("non-finite value {v}")));
        }
        ensure_unique("field", &field_ids)?;
        ensure_unique("period", &period_ids)?;
        Ok(Self {
            values,
            field_ids,
            period_ids,
        })
    }

    /// Panel with generated labels `f1..fN` and `1..T`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (t, n) = values.shape();
        let fields = (1..=n).map(|i| format!("f{i}")).collect();
        let periods = (1..=t).map(|i| i.to_string()).collect();
        Self::new(values, fields, periods)
    }

    /// Number of periods.
    pub fn t(&self) -> usize {
        self.values.nrows()
    }

    /// Number of fields.
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn field_ids(&self) -> &[String] {
        &self.field_ids
    }

    pub fn period_ids(&self) -> &[String] {
        &self.period_ids
    }

    /// The area-yield index: the cross-field mean of every period.
    pub fn row_means(&self) -> DVector<f64> {
        let n = self.n() as f64;
        DVector::from_iterator(self.t(), self.values.row_iter().map(|r| r.sum() / n))
    }

    /// The index `f = Y w` for field weights `w`.
    pub fn weighted_index(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "weight vector has length {}, panel has {} fields",
                w.len(),
                self.n()
            )));
        }
        Ok(&self.values * w)
    }

    /// Fields whose values do not vary over the periods.
    pub fn constant_fields(&self) -> Vec<String> {
        self.values
            .column_iter()
            .zip(&self.field_ids)
            .filter(|(c, _)| c.max() == c.min())
            .map(|(_, id)| id.clone())
            .collect()
    }
}

fn ensure_unique(kind: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidPanel(format!("duplicate {kind} id {id:?}")));
        }
    }
    Ok(())
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Csv(format!("row {row}, column {col:?}: cannot parse {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Csv(format!("row {row}, column {col:?}: non-finite value {s:?}")));
    }
    Ok(Some(v))
}

/// Reads and validates a panel from CSV text.
pub fn read_panel<R: Read>(reader: R, options: IngestOptions) -> Result<(YieldPanel, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let has_period = headers
        .first()
        .is_some_and(|h| h.eq_ignore_ascii_case(PERIOD_COLUMN));
    let field_ids: Vec<String> = headers.iter().skip(usize::from(has_period)).cloned().collect();
    if field_ids.is_empty() {
        return Err(Error::InvalidPanel("no field columns".into()));
    }
    ensure_unique("field", &field_ids)?;

    let mut period_ids = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); field_ids.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2; // 1-based, after the header
        let mut cells = record.iter();
        if has_period {
            period_ids.push(cells.next().unwrap_or_default().trim().to_string());
        } else {
            period_ids.push((i + 1).to_string());
        }
        for ((col, cell), id) in columns.iter_mut().zip(cells).zip(&field_ids) {
            col.push(parse_cell(cell, row, id)?);
        }
    }
    ensure_unique("period", &period_ids)?;
    let t = period_ids.len();
    if t < 2 {
        return Err(Error::InvalidPanel(format!("need at least 2 periods, got {t}")));
    }

    let mut report = IngestReport::default();
    let mut kept_ids = Vec::new();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for (id, col) in field_ids.into_iter().zip(columns) {
        if col.iter().any(Option::is_none) {
            match options.missing {
                MissingPolicy::Drop => report.dropped_fields.push(id),
                MissingPolicy::Fail => {
                    return Err(Error::InvalidPanel(format!("field {id:?} has missing values")))
                }
            }
            continue;
        }
        kept.push(col.into_iter().flatten().collect());
        kept_ids.push(id);
    }
    if kept.len() < 2 {
        return Err(Error::InvalidPanel(format!(
            "fewer than 2 usable fields ({} kept, {} dropped for missing data)",
            kept.len(),
            report.dropped_fields.len()
        )));
    }
    let values = DMatrix::from_fn(t, kept.len(), |r, c| kept[c][r]);
    let panel = YieldPanel::new(values, kept_ids, period_ids)?;
    report.constant_fields = panel.constant_fields();
    Ok((panel, report))
}

/// Loads a panel from a CSV file.
pub fn load_panel<P: AsRef<Path>>(path: P, options: IngestOptions) -> Result<(YieldPanel, IngestReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(std::io::BufReader::new(file), options)
}

/// Writes a panel in the same CSV layout `read_panel` accepts.
pub fn write_panel<W: Write>(panel: &YieldPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![PERIOD_COLUMN.to_string()];
    header.extend(panel.field_ids.iter().cloned());
    w.write_record(&header)?;
    for (r, period) in panel.period_ids.iter().enumerate() {
        let mut rec = vec![period.clone()];
        rec.extend(panel.values.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Divisor applied to the centred cross-product matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// Maximum-likelihood scaling, `1/T`.
    T,
    /// Unbiased scaling, `1/(T-1)`.
    #[default]
    TMinusOne,
}

impl Divisor {
    pub fn value(self, t: usize) -> f64 {
        match self {
            Divisor::T => t as f64,
            Divisor::TMinusOne => (t - 1) as f64,
        }
    }
}

/// Column means and covariance of a panel.
///
/// Every share and R² ratio built on the covariance is invariant to the
/// divisor.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub divisor: Divisor,
}

pub fn sample_moments(panel: &YieldPanel, divisor: Divisor) -> SampleMoments {
    let n = panel.n();
    let mean = DVector::from_iterator(n, panel.values.column_iter().map(|c| c.mean()));
    let x = center_columns(&panel.values);
    let mut covariance = x.tr_mul(&x) / divisor.value(panel.t());
    symmetrize_upper(&mut covariance);
    SampleMoments {
        mean,
        covariance,
        divisor,
    }
}
