//! Dataset files: one header row, then one subject per row.
//!
//! ```text
//! delta,time,left,right,x1,x2
//! 1,2.3,,,0.4,1
//! 0,,1.1,inf,-0.2,0
//! ```
//!
//! `delta = 1` rows need `time`; `delta = 0` rows read `left` and `right`,
//! where an empty cell or `-inf`/`inf` (any case) stands for an infinite
//! endpoint. Every other column is a covariate, in header order; the
//! intercept is added on reading and dropped on writing.

use std::io::{Read, Write};

use crate::error::{IcqrError, Result};
use crate::model::{Dataset, Observation};

const RESERVED: [&str; 4] = ["delta", "time", "left", "right"];

/// A dataset with its covariate names (intercept excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
}

impl CsvData {
    /// Coefficient names, intercept first.
    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.covariate_names.iter().cloned())
            .collect()
    }
}

fn parse_error(line: u64, message: impl Into<String>) -> IcqrError {
    IcqrError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_number(cell: &str, line: u64, column: &str) -> Result<f64> {
    cell.parse::<f64>()
        .map_err(|_| parse_error(line, format!("column {column}: cannot read {cell:?} as a number")))
}

/// Reads an endpoint; empty cells become `missing`.
fn parse_endpoint(cell: &str, missing: f64, line: u64, column: &str) -> Result<f64> {
    if cell.is_empty() {
        return Ok(missing);
    }
    match cell.to_ascii_lowercase().as_str() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => parse_number(cell, line, column),
    }
}

/// Log of a raw time; 0 maps to `-inf`.
fn log_time(v: f64, line: u64, column: &str) -> Result<f64> {
    if v < 0.0 || v.is_nan() {
        return Err(parse_error(
            line,
            format!("column {column}: raw time {v} is negative, cannot take logs"),
        ));
    }
    Ok(v.ln())
}

/// Parses a dataset. With `log_times`, times and endpoints are raw and get
/// log-transformed; otherwise they are taken as already on the log scale.
pub fn read_dataset<R: Read>(reader: R, log_times: bool) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = RESERVED.iter().copied().filter(|c| position(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(parse_error(1, format!("header lacks column(s): {}", missing.join(", "))));
    }
    let [delta_at, time_at, left_at, right_at] = RESERVED.map(|c| position(c).unwrap_or(0));
    let covariate_at: Vec<usize> = (0..headers.len())
        .filter(|i| ![delta_at, time_at, left_at, right_at].contains(i))
        .collect();
    let covariate_names = covariate_at.iter().map(|&i| headers[i].clone()).collect();

    let mut observations = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let mut covariates = Vec::with_capacity(covariate_at.len() + 1);
        covariates.push(1.0);
        for &i in &covariate_at {
            covariates.push(parse_number(&record[i], line, &headers[i])?);
        }
        let obs = match &record[delta_at] {
            "1" => {
                if record[time_at].is_empty() {
                    return Err(parse_error(line, "delta = 1 but time is empty"));
                }
                let mut t = parse_number(&record[time_at], line, "time")?;
                if log_times {
                    t = log_time(t, line, "time")?;
                }
                Observation::exact(t, covariates)
            }
            "0" => {
                let mut l = parse_endpoint(&record[left_at], f64::NEG_INFINITY, line, "left")?;
                let mut r = parse_endpoint(&record[right_at], f64::INFINITY, line, "right")?;
                if log_times {
                    if l.is_finite() {
                        l = log_time(l, line, "left")?;
                    }
                    if r.is_finite() {
                        r = log_time(r, line, "right")?;
                    }
                }
                Observation::censored(l, r, covariates)
            }
            other => return Err(parse_error(line, format!("delta must be 0 or 1, got {other:?}"))),
        };
        observations.push(obs);
        lines.push(line);
    }
    let dataset = Dataset::new(observations).map_err(|e| match e {
        IcqrError::InvalidObservation { index, reason } => parse_error(lines[index], reason),
        IcqrError::EmptyDataset => parse_error(1, "no data rows"),
        other => other,
    })?;
    Ok(CsvData {
        dataset,
        covariate_names,
    })
}

/// `-inf`, `inf`, or the shortest representation that reads back exactly.
pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Writes a dataset in the format [`read_dataset`] reads (log scale).
pub fn write_dataset<W: Write>(writer: W, data: &CsvData) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for o in &data.dataset {
        let mut row = if o.exact {
            vec!["1".to_string(), format_value(o.left), String::new(), String::new()]
        } else {
            vec!["0".to_string(), String::new(), format_value(o.left), format_value(o.right)]
        };
        row.extend(o.covariates[1..].iter().map(|&v| format_value(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
