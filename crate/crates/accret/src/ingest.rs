//! Loading and validation of daily closing-price series from delimited files.
//!
//! Rows with unparsable or non-positive prices are dropped and recorded (or
//! fatal under strict mode). Duplicate dates are always fatal: silently
//! deduplicating would corrupt the row-indexed accumulation windows downstream.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    FileNotFound {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("no parsable rows in input")]
    NoParsableRows,
    #[error("duplicate date {0} (corrupted input)")]
    DuplicateDate(NaiveDate),
    #[error("row {row}: {reason} (strict mode)")]
    StrictRow { row: usize, reason: String },
    #[error("price series needs at least 2 rows, got {0}")]
    TooShort(usize),
    #[error("write error: {0}")]
    Io(#[from] std::io::Error),
}

/// Column mapping and parsing options for delimited price files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSpec {
    pub date_col: String,
    pub price_col: String,
    /// chrono format string for the date column.
    pub date_format: String,
    pub delimiter: char,
    /// Fail on the first malformed row instead of dropping it.
    pub strict: bool,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            date_col: "date".to_string(),
            price_col: "close".to_string(),
            date_format: "%Y-%m-%d".to_string(),
            delimiter: ',',
            strict: false,
        }
    }
}

/// A validated daily price series: strictly increasing dates, positive prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
    pub label: String,
}

impl PriceSeries {
    /// Builds a series from parallel arrays, enforcing the type invariants.
    pub fn new(
        dates: Vec<NaiveDate>,
        prices: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self, IngestError> {
        if dates.len() < 2 {
            return Err(IngestError::TooShort(dates.len()));
        }
        assert_eq!(dates.len(), prices.len(), "dates/prices length mismatch");
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(IngestError::DuplicateDate(w[1]));
            }
        }
        assert!(
            prices.iter().all(|p| p.is_finite() && *p > 0.0),
            "prices must be positive and finite"
        );
        Ok(Self {
            dates,
            prices,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Outcome of loading or validating a series.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Accepted rows.
    pub row_count: usize,
    /// (1-based data row index, reason) for every dropped row.
    pub dropped_rows: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

/// Loads a delimited price file into a `PriceSeries`.
///
/// Rows are sorted by date after parsing; equal dates are fatal. Returns the
/// series together with a report of dropped rows.
pub fn load_price_series(
    path: &Path,
    columns: &ColumnSpec,
) -> Result<(PriceSeries, ValidationReport), IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::FileNotFound {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(columns.delimiter as u8)
        .flexible(true)
        .from_reader(file);

    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let date_idx = find(&columns.date_col)?;
    let price_idx = find(&columns.price_col)?;

    let mut report = ValidationReport::default();
    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let mut drop = |reason: String| -> Result<(), IngestError> {
            if columns.strict {
                Err(IngestError::StrictRow { row, reason })
            } else {
                report.dropped_rows.push((row, reason));
                Ok(())
            }
        };
        let date_str = record.get(date_idx).unwrap_or("").trim();
        let price_str = record.get(price_idx).unwrap_or("").trim();
        let date = match NaiveDate::parse_from_str(date_str, &columns.date_format) {
            Ok(d) => d,
            Err(_) => {
                drop(format!("unparsable date {date_str:?}"))?;
                continue;
            }
        };
        let price = match price_str.replace(',', "").parse::<f64>() {
            Ok(p) if p.is_finite() && p > 0.0 => p,
            Ok(p) => {
                drop(format!("non-positive price {p}"))?;
                continue;
            }
            Err(_) => {
                drop(format!("unparsable price {price_str:?}"))?;
                continue;
            }
        };
        rows.push((date, price));
    }

    if rows.is_empty() {
        return Err(IngestError::NoParsableRows);
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(IngestError::DuplicateDate(w[0].0));
        }
    }
    report.row_count = rows.len();

    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".to_string());
    let (dates, prices) = rows.into_iter().unzip();
    let series = PriceSeries::new(dates, prices, label)?;
    Ok((series, report))
}

/// Reports calendar gaps longer than 7 days; never mutates the input.
pub fn validate_series(series: &PriceSeries) -> ValidationReport {
    let mut report = ValidationReport {
        row_count: series.len(),
        ..Default::default()
    };
    for (i, w) in series.dates.windows(2).enumerate() {
        let gap = (w[1] - w[0]).num_days();
        if gap > 7 {
            report.warnings.push(format!(
                "gap of {gap} calendar days between {} and {} (rows {}..{})",
                w[0],
                w[1],
                i + 1,
                i + 2
            ));
        }
    }
    report
}

/// Writes a series back out as `date,close` CSV (ISO dates).
pub fn save_price_series(path: &Path, series: &PriceSeries) -> Result<(), IngestError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "date,close")?;
    for (d, p) in series.dates.iter().zip(&series.prices) {
        writeln!(out, "{},{}", d.format("%Y-%m-%d"), p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_well_formed_input() {
        let f = write_csv("date,close\n2020-01-01,100\n2020-01-02,101\n2020-01-03,102\n");
        let (series, report) = load_price_series(f.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(series.len(), 3);
        assert_eq!(report.row_count, 3);
        assert!(report.dropped_rows.is_empty());
        assert_eq!(series.prices, vec![100.0, 101.0, 102.0]);
    }

    #[test]
    fn bad_rows_dropped_and_recorded() {
        let mut content = String::from("date,close\n");
        for i in 1..=10 {
            content.push_str(&format!("2020-01-{i:02},{}\n", 100 + i));
        }
        content.push_str("2020-01-11,-5\n");
        let f = write_csv(&content);
        let (series, report) = load_price_series(f.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(series.len(), 10);
        assert_eq!(report.dropped_rows.len(), 1);
        assert!(report.dropped_rows[0].1.contains("non-positive"));
        // dropped + accepted = raw rows
        assert_eq!(report.row_count + report.dropped_rows.len(), 11);
    }

    #[test]
    fn strict_mode_fails_on_bad_row() {
        let f = write_csv("date,close\n2020-01-01,100\n2020-01-02,oops\n2020-01-03,102\n");
        let columns = ColumnSpec {
            strict: true,
            ..Default::default()
        };
        assert!(matches!(
            load_price_series(f.path(), &columns),
            Err(IngestError::StrictRow { row: 2, .. })
        ));
    }

    #[test]
    fn duplicate_dates_are_fatal() {
        let f = write_csv("date,close\n2020-01-01,100\n2020-01-01,101\n2020-01-02,102\n");
        assert!(matches!(
            load_price_series(f.path(), &ColumnSpec::default()),
            Err(IngestError::DuplicateDate(_))
        ));
    }

    #[test]
    fn unsorted_input_is_sorted_by_date() {
        let f = write_csv("date,close\n2020-01-03,102\n2020-01-01,100\n2020-01-02,101\n");
        let (series, _) = load_price_series(f.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(series.prices, vec![100.0, 101.0, 102.0]);
    }

    #[test]
    fn missing_file_and_empty_input() {
        assert!(matches!(
            load_price_series(Path::new("/nonexistent/prices.csv"), &ColumnSpec::default()),
            Err(IngestError::FileNotFound { .. })
        ));
        let f = write_csv("date,close\nnot-a-date,abc\n");
        assert!(matches!(
            load_price_series(f.path(), &ColumnSpec::default()),
            Err(IngestError::NoParsableRows)
        ));
    }

    #[test]
    fn gap_warnings() {
        let contiguous = PriceSeries::new(
            vec![
                NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(),
                NaiveDate::from_ymd_opt(2020, 1, 7).unwrap(),
                NaiveDate::from_ymd_opt(2020, 1, 8).unwrap(),
            ],
            vec![1.0, 2.0, 3.0],
            "t",
        )
        .unwrap();
        assert!(validate_series(&contiguous).warnings.is_empty());

        let gappy = PriceSeries::new(
            vec![
                NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2020, 1, 31).unwrap(),
            ],
            vec![1.0, 2.0],
            "t",
        )
        .unwrap();
        let report = validate_series(&gappy);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.row_count, 2);
    }

    #[test]
    fn roundtrip_is_idempotent() {
        let f = write_csv("date,close\n2020-01-01,100.25\n2020-01-02,101.5\n2020-01-03,99.875\n");
        let (series, _) = load_price_series(f.path(), &ColumnSpec::default()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_price_series(out.path(), &series).unwrap();
        let (series2, _) = load_price_series(out.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(series.dates, series2.dates);
        assert_eq!(series.prices, series2.prices);
    }

    #[test]
    fn custom_columns_and_delimiter() {
        let f = write_csv("Day;PX_LAST\n01/02/2020;3257.85\n01/03/2020;3234.85\n");
        let columns = ColumnSpec {
            date_col: "Day".into(),
            price_col: "PX_LAST".into(),
            date_format: "%m/%d/%Y".into(),
            delimiter: ';',
            strict: false,
        };
        let (series, _) = load_price_series(f.path(), &columns).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series.prices[0], 3257.85);
    }
}
