//! Deterministic text checkpoints.
//!
//! Layout: a `STAM-CKPT 1` header, the full canonical config, the stream
//! cursor, one block per unit holding its centroid records and step counter,
//! and an `[end]` guard. Reals are serialized with the shortest exact
//! round-trip decimal representation, so load(save(state)) is bit-identical
//! and save(load(file)) reproduces the file byte for byte. Checkpoints hold
//! centroid records and configuration only; there is no record kind for raw
//! exemplars.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{emit_config, parse_config, RunConfig};
use crate::error::{Result, StamError};
use crate::hierarchy::Hierarchy;
use crate::unit::StamUnit;

pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_TAG: &str = "STAM-CKPT";

/// Canonical serialized form of the full engine state. Doubles as the state
/// digest used by purity checks: two states are identical iff their strings
/// are.
pub fn checkpoint_string(config: &RunConfig, hierarchy: &Hierarchy, cursor: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER_TAG} {CHECKPOINT_VERSION}");
    out.push_str("[config]\n");
    out.push_str(&emit_config(config));
    out.push_str("[state]\n");
    let _ = writeln!(out, "cursor = {cursor}");
    for (li, layer) in hierarchy.layers().iter().enumerate() {
        for (ui, unit) in layer.units().iter().enumerate() {
            let _ = writeln!(out, "[unit {li} {ui}]");
            let _ = writeln!(out, "dim = {}", unit.dim());
            let _ = writeln!(out, "step = {}", unit.step());
            for c in unit.centroids() {
                let _ = write!(out, "centroid {} {}", c.count(), c.last_used());
                for v in c.center() {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
    }
    out.push_str("[end]\n");
    out
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &RunConfig,
    hierarchy: &Hierarchy,
    cursor: u64,
) -> Result<()> {
    std::fs::write(path, checkpoint_string(config, hierarchy, cursor))?;
    Ok(())
}

fn corrupt(context: &str, message: impl Into<String>) -> StamError {
    StamError::CorruptCheckpoint {
        context: context.to_string(),
        message: message.into(),
    }
}

/// Parses a checkpoint back into (config, hierarchy, cursor), re-validating
/// every construction invariant on the way.
pub fn parse_checkpoint(text: &str) -> Result<(RunConfig, Hierarchy, u64)> {
    let mut lines = text.lines().peekable();

    let header = lines.next().ok_or_else(|| corrupt("header", "empty file"))?;
    let mut parts = header.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(HEADER_TAG), Some(version), None) => {
            if version != CHECKPOINT_VERSION.to_string() {
                return Err(StamError::VersionMismatch {
                    found: version.to_string(),
                    supported: CHECKPOINT_VERSION,
                });
            }
        }
        _ => return Err(corrupt("header", format!("bad header line `{header}`"))),
    }

    if lines.next() != Some("[config]") {
        return Err(corrupt("config", "missing [config] section"));
    }
    let mut config_text = String::new();
    while let Some(&line) = lines.peek() {
        if line.starts_with('[') {
            break;
        }
        config_text.push_str(line);
        config_text.push('\n');
        lines.next();
    }
    let config = parse_config(&config_text)
        .map_err(|e| corrupt("config", e.to_string()))?;

    if lines.next() != Some("[state]") {
        return Err(corrupt("state", "missing [state] section"));
    }
    let cursor_line = lines.next().ok_or_else(|| corrupt("state", "missing cursor"))?;
    let cursor: u64 = cursor_line
        .strip_prefix("cursor = ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("state", format!("bad cursor line `{cursor_line}`")))?;

    let mut hierarchy = config
        .hierarchy()
        .map_err(|e| corrupt("config", e.to_string()))?;

    let shape: Vec<usize> = hierarchy.layers().iter().map(|l| l.units().len()).collect();
    for (li, units_in_layer) in shape.iter().enumerate() {
        for ui in 0..*units_in_layer {
            let context = format!("unit {li} {ui}");
            let expected_header = format!("[unit {li} {ui}]");
            match lines.next() {
                Some(line) if line == expected_header => {}
                other => {
                    return Err(corrupt(
                        &context,
                        format!("expected `{expected_header}`, got `{}`", other.unwrap_or("end of file")),
                    ))
                }
            }
            let dim: usize = lines
                .next()
                .and_then(|l| l.strip_prefix("dim = "))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| corrupt(&context, "bad dim line"))?;
            let step: u64 = lines
                .next()
                .and_then(|l| l.strip_prefix("step = "))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| corrupt(&context, "bad step line"))?;
            let mut centroids = Vec::new();
            while let Some(&line) = lines.peek() {
                if line.starts_with('[') {
                    break;
                }
                lines.next();
                let rest = line
                    .strip_prefix("centroid ")
                    .ok_or_else(|| corrupt(&context, format!("unexpected line `{line}`")))?;
                let mut fields = rest.split(' ');
                let count: u64 = fields
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| corrupt(&context, "bad centroid count"))?;
                let last_used: u64 = fields
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| corrupt(&context, "bad centroid last_used"))?;
                let center = fields
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| corrupt(&context, format!("bad centroid value: {e}")))?;
                if center.len() != dim {
                    return Err(corrupt(
                        &context,
                        format!("centroid has {} values, dim is {dim}", center.len()),
                    ));
                }
                centroids.push((center, count, last_used));
            }
            let template = &hierarchy.layers()[li].units()[ui];
            let unit = StamUnit::from_parts(dim, *template.config(), step, centroids)
                .map_err(|e| corrupt(&context, e.to_string()))?;
            if dim != template.dim() {
                return Err(corrupt(
                    &context,
                    format!("dim {dim} does not match the configured {}", template.dim()),
                ));
            }
            hierarchy.layers_mut()[li].units_mut()[ui] = unit;
        }
    }

    match lines.next() {
        Some("[end]") => {}
        other => {
            return Err(corrupt(
                "end",
                format!("expected [end], got `{}`", other.unwrap_or("end of file")),
            ))
        }
    }
    if let Some(extra) = lines.next() {
        return Err(corrupt("end", format!("trailing content `{extra}`")));
    }

    Ok((config, hierarchy, cursor))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RunConfig, Hierarchy, u64)> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text)
}

/// Structural audit of a serialized checkpoint: strict-parses the whole file
/// and reports what is stored. The format has no exemplar record kind, so a
/// clean parse proves the state holds centroid records and config only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointAudit {
    /// Total stored real numbers across all centroid records.
    pub stored_reals: usize,
    pub centroid_records: usize,
}

pub fn audit_checkpoint(text: &str) -> Result<CheckpointAudit> {
    let (_, hierarchy, _) = parse_checkpoint(text)?;
    let mut stored_reals = 0;
    let mut centroid_records = 0;
    for layer in hierarchy.layers() {
        for unit in layer.units() {
            centroid_records += unit.len();
            stored_reals += unit.len() * unit.dim();
        }
    }
    Ok(CheckpointAudit {
        stored_reals,
        centroid_records,
    })
}
