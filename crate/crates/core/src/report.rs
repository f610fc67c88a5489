//! CSV metric reports with the fixed schema `phase,metric,value`.
//!
//! The phase column carries a phase id, a unit path (`L1U0`), a prototype or
//! step index, or `all` for global metrics; metric names are the
//! metrics-report field names. Values use the shortest exact round-trip
//! decimal form, so identical runs emit identical bytes.

use std::path::Path;

use crate::error::{Result, StamError};

pub const CSV_HEADER: &str = "phase,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub phase: String,
    pub metric: String,
    pub value: f64,
}

impl CsvRow {
    pub fn new(phase: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        Self {
            phase: phase.into(),
            metric: metric.into(),
            value,
        }
    }
}

pub fn format_report(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.phase);
        out.push(',');
        out.push_str(&row.metric);
        out.push(',');
        out.push_str(&format!("{}", row.value));
        out.push('\n');
    }
    out
}

pub fn write_report(path: impl AsRef<Path>, rows: &[CsvRow]) -> Result<()> {
    std::fs::write(path, format_report(rows))?;
    Ok(())
}

pub fn parse_report(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => {
            return Err(StamError::ParseError {
                line: 1,
                message: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (phase, metric, value) = match (parts.next(), parts.next(), parts.next()) {
            (Some(p), Some(m), Some(v)) => (p, m, v),
            _ => {
                return Err(StamError::ParseError {
                    line: i + 1,
                    message: format!("expected 3 fields, got `{line}`"),
                })
            }
        };
        let value = value.parse().map_err(|_| StamError::ParseError {
            line: i + 1,
            message: format!("bad value `{value}`"),
        })?;
        rows.push(CsvRow::new(phase, metric, value));
    }
    Ok(rows)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_report(&text)
}
