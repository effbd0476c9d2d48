//! Loading real-valued series from CSV, turning them into states and running
//! the one-step-ahead backtest.

use std::fs;
use std::io::Write;
use std::path::Path;

use hmmcp_core::backtest::{backtest, BacktestConfig, BacktestReport, WindowMode};
use hmmcp_core::discretize::{quantize, sign_states, QuantizationScheme};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header names recognized as a timestamp column.
const TIMESTAMP_NAMES: [&str; 4] = ["date", "time", "timestamp", "datetime"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub timestamps: Option<Vec<String>>,
    pub values: Vec<f64>,
    pub source: String,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        let source = source.into();
        if values.len() < 2 {
            return Err(Error::EmptySeries {
                path: source.into(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("series values must be finite".into()));
        }
        Ok(Self {
            timestamps: None,
            values,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFormat {
    /// One value per row. The header is optional; `column` selects a named
    /// column and requires one.
    CsvColumn { column: Option<String> },
    /// Price bars with a header; the named close column is read.
    CsvOhlc { close: String },
}

impl SeriesFormat {
    pub fn ohlc() -> Self {
        SeriesFormat::CsvOhlc { close: "close".into() }
    }
}

fn same_name(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

fn find_column(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| same_name(h, name))
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_owned(),
            name: name.to_owned(),
        })
}

fn parse_value(field: Option<&str>, row: u64, path: &Path) -> Result<f64> {
    let parse_error = |message: String| Error::Parse {
        path: path.to_owned(),
        row,
        message,
    };
    let text = field.ok_or_else(|| parse_error("missing value field".into()))?.trim();
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(format!("cannot read {text:?} as a finite number"))),
    }
}

/// Reads a series from `path`. Row numbers in errors are 1-based file lines.
pub fn load_series(path: &Path, format: &SeriesFormat) -> Result<TimeSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        records.push((line, record));
    }
    if records.is_empty() {
        return Err(Error::EmptySeries {
            path: path.to_owned(),
            found: 0,
        });
    }

    let first = &records[0].1;
    let looks_numeric = |r: &csv::StringRecord| r.iter().any(|f| f.parse::<f64>().is_ok());
    let header = match format {
        SeriesFormat::CsvColumn { column: None } if looks_numeric(first) => None,
        _ => Some(first.clone()),
    };
    let value_col = match (format, &header) {
        (SeriesFormat::CsvOhlc { close }, Some(h)) => find_column(h, close, path)?,
        (SeriesFormat::CsvColumn { column: Some(name) }, Some(h)) => find_column(h, name, path)?,
        (SeriesFormat::CsvColumn { column: None }, Some(h)) => {
            let candidates: Vec<usize> = (0..h.len())
                .filter(|&i| !TIMESTAMP_NAMES.iter().any(|n| same_name(&h[i], n)))
                .collect();
            match candidates[..] {
                [only] => only,
                _ => {
                    return Err(Error::Config(format!(
                        "{}: several value columns, choose one by name",
                        path.display()
                    )))
                }
            }
        }
        (_, None) => first.len() - 1,
    };
    let time_col = header
        .as_ref()
        .and_then(|h| h.iter().position(|f| TIMESTAMP_NAMES.iter().any(|n| same_name(f, n))));

    let body = if header.is_some() { &records[1..] } else { &records[..] };
    let mut values = Vec::with_capacity(body.len());
    let mut stamps = Vec::new();
    for (line, record) in body {
        values.push(parse_value(record.get(value_col), *line, path)?);
        if let Some(c) = time_col {
            stamps.push(record.get(c).unwrap_or_default().to_owned());
        }
    }
    if values.len() < 2 {
        return Err(Error::EmptySeries {
            path: path.to_owned(),
            found: values.len(),
        });
    }
    Ok(TimeSeries {
        timestamps: time_col.map(|_| stamps),
        values,
        source: path.display().to_string(),
    })
}

/// How values become states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateRule {
    /// Unit-width standard-deviation bands around the mean.
    SigmaBands(usize),
    /// Explicit cut points in z-score units.
    Cuts(Vec<f64>),
    /// Gain (or unchanged) versus loss against the previous value.
    Sign,
}

impl StateRule {
    pub fn n_states(&self) -> usize {
        match self {
            StateRule::SigmaBands(n) => *n,
            StateRule::Cuts(c) => c.len() + 1,
            StateRule::Sign => 2,
        }
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<usize>> {
        Ok(match self {
            StateRule::SigmaBands(n) => quantize(values, &QuantizationScheme::sigma_bands(*n)?)?,
            StateRule::Cuts(c) => quantize(values, &QuantizationScheme::new(c.clone())?)?,
            StateRule::Sign => sign_states(values)?,
        })
    }
}

pub fn run_backtest(series: &TimeSeries, rule: &StateRule, config: &BacktestConfig) -> Result<BacktestReport> {
    let states = rule.apply(&series.values)?;
    Ok(backtest(&states, rule.n_states(), config)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub source: String,
    pub n_states: usize,
    #[serde(rename = "T")]
    pub calibration_len: usize,
    pub alpha: f64,
    pub window: WindowMode,
    pub test_steps: usize,
    pub coverage: f64,
    pub scaled_set_size: f64,
    pub mean_set_size: f64,
}

impl BacktestSummary {
    pub fn new(report: &BacktestReport, source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            n_states: report.n_states,
            calibration_len: report.calibration_len,
            alpha: report.alpha,
            window: report.window,
            test_steps: report.records.len(),
            coverage: report.coverage,
            scaled_set_size: report.scaled_set_size,
            mean_set_size: report.scaled_set_size * report.n_states as f64,
        }
    }
}

/// Per-step CSV: `t,true_state,set_members,set_size,hit`, members joined by `;`.
pub fn write_backtest_csv<W: Write>(report: &BacktestReport, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let label = "backtest output";
    writer
        .write_record(["t", "true_state", "set_members", "set_size", "hit"])
        .map_err(|e| Error::csv(label, e))?;
    for r in &report.records {
        let members: Vec<String> = r.members.iter().map(usize::to_string).collect();
        writer
            .write_record([
                r.t.to_string(),
                r.true_state.to_string(),
                members.join(";"),
                r.set_size.to_string(),
                u8::from(r.hit).to_string(),
            ])
            .map_err(|e| Error::csv(label, e))?;
    }
    writer.flush().map_err(|e| Error::io(label, e))
}
