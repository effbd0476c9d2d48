//! File formats for augmented sequences, observation lists and prediction
//! reports.
//!
//! An augmented sequence file has the header `state,observation` and one
//! 0-based index pair per row. Observation files hold one index per row,
//! either alone or in a column named `observation`.

use std::fs;
use std::io::Write;
use std::path::Path;

use hmmcp_core::conformal::{CandidateOutcome, PredictionSet};
use hmmcp_core::hmm::{AugmentedSequence, Pair};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn parse_index(text: &str, row: u64, path: &Path) -> Result<usize> {
    text.trim().parse::<usize>().map_err(|_| Error::Parse {
        path: path.to_owned(),
        row,
        message: format!("cannot read {:?} as a nonnegative index", text.trim()),
    })
}

/// Rows of `path` with an optional header, as `(line, record)`.
fn read_rows(path: &Path) -> Result<(Option<csv::StringRecord>, Vec<(u64, csv::StringRecord)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        rows.push((record.position().map_or(0, |p| p.line()), record));
    }
    let header = match rows.first() {
        Some((_, first)) if first.iter().all(|f| f.parse::<usize>().is_err()) => Some(rows.remove(0).1),
        _ => None,
    };
    Ok((header, rows))
}

pub fn read_augmented(path: &Path) -> Result<AugmentedSequence> {
    let (_, rows) = read_rows(path)?;
    let mut pairs = Vec::with_capacity(rows.len());
    for (line, record) in rows {
        if record.len() != 2 {
            return Err(Error::Parse {
                path: path.to_owned(),
                row: line,
                message: format!("expected 2 fields (state, observation), found {}", record.len()),
            });
        }
        pairs.push(Pair::new(
            parse_index(&record[0], line, path)?,
            parse_index(&record[1], line, path)?,
        ));
    }
    if pairs.is_empty() {
        return Err(Error::EmptySeries {
            path: path.to_owned(),
            found: 0,
        });
    }
    Ok(AugmentedSequence::new(pairs)?)
}

pub fn read_observations(path: &Path) -> Result<Vec<usize>> {
    let (header, rows) = read_rows(path)?;
    let column = header
        .as_ref()
        .and_then(|h| h.iter().position(|f| f.eq_ignore_ascii_case("observation")));
    let mut out = Vec::with_capacity(rows.len());
    for (line, record) in rows {
        let index = column.unwrap_or(record.len() - 1);
        let field = record.get(index).ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            row: line,
            message: "missing observation field".into(),
        })?;
        out.push(parse_index(field, line, path)?);
    }
    if out.is_empty() {
        return Err(Error::EmptySeries {
            path: path.to_owned(),
            found: 0,
        });
    }
    Ok(out)
}

pub fn write_augmented<W: Write>(seq: &AugmentedSequence, mut out: W) -> std::io::Result<()> {
    writeln!(out, "state,observation")?;
    for p in seq.pairs() {
        writeln!(out, "{},{}", p.state, p.obs)?;
    }
    out.flush()
}

pub fn augmented_json(seq: &AugmentedSequence) -> Result<String> {
    let mut text = serde_json::to_string_pretty(seq.pairs())?;
    text.push('\n');
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    #[serde(rename = "T")]
    pub calibration_len: usize,
    #[serde(rename = "m")]
    pub horizon: usize,
    pub alpha: f64,
    pub n_states: usize,
    pub n_obs: usize,
    pub approximate: bool,
    pub members: Vec<Vec<usize>>,
    pub candidates: Vec<CandidateOutcome>,
}

impl PredictionReport {
    pub fn new(set: &PredictionSet, calibration_len: usize, n_obs: usize) -> Self {
        Self {
            calibration_len,
            horizon: set.horizon,
            alpha: set.alpha,
            n_states: set.n_states,
            n_obs,
            approximate: set.approximate(),
            members: set.members().map(<[usize]>::to_vec).collect(),
            candidates: set.candidates.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// One row per candidate: `sequence,quantile,at_or_above,permutations,blocks,member`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let label = "prediction output";
        let mut writer = csv::Writer::from_writer(out);
        writer
            .write_record([
                "sequence",
                "quantile",
                "at_or_above",
                "permutations",
                "blocks",
                "member",
            ])
            .map_err(|e| Error::csv(label, e))?;
        for c in &self.candidates {
            let seq: Vec<String> = c.sequence.iter().map(usize::to_string).collect();
            writer
                .write_record([
                    seq.join(";"),
                    c.quantile.to_string(),
                    c.at_or_above.to_string(),
                    c.permutations.to_string(),
                    c.blocks.to_string(),
                    u8::from(c.member).to_string(),
                ])
                .map_err(|e| Error::csv(label, e))?;
        }
        writer.flush().map_err(|e| Error::io(label, e))
    }
}
