//! Evaluation protocols over a frozen hierarchy: clustering purity, few-shot
//! centroid labeling and classification, forgetting, centroid drift against
//! known prototypes, memory audits and reconstruction error. Everything here
//! is read-only with respect to the hierarchy.

use std::collections::BTreeMap;

use crate::error::{Result, StamError};
use crate::hierarchy::{extract_patch, Hierarchy, SettleTrace};
use crate::report::CsvRow;
use crate::unit::StamUnit;

/// Fraction of assignments explained by each centroid's majority label.
pub fn purity(assignments: &[(usize, u32)]) -> Result<f64> {
    if assignments.is_empty() {
        return Err(StamError::EmptyInput);
    }
    let mut tallies: BTreeMap<usize, BTreeMap<u32, usize>> = BTreeMap::new();
    for (centroid, label) in assignments {
        *tallies.entry(*centroid).or_default().entry(*label).or_default() += 1;
    }
    let majority: usize = tallies
        .values()
        .map(|votes| votes.values().copied().max().unwrap_or(0))
        .sum();
    Ok(majority as f64 / assignments.len() as f64)
}

/// Majority-vote label per centroid, derived from a labeled probe set.
/// Only centroids existing at labeling time appear; unlabeled ones are
/// `None`. Labels are held per (layer, unit); the voting protocol fills the
/// top-level unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    labels: Vec<Vec<Vec<Option<u32>>>>,
}

impl LabelMap {
    pub fn label(&self, layer: usize, unit: usize, centroid: usize) -> Option<u32> {
        self.labels
            .get(layer)
            .and_then(|l| l.get(unit))
            .and_then(|u| u.get(centroid))
            .copied()
            .flatten()
    }

    /// Label of a top-level centroid.
    pub fn top_label(&self, centroid: usize) -> Option<u32> {
        let top = self.labels.len() - 1;
        self.label(top, 0, centroid)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels
            .iter()
            .flatten()
            .flatten()
            .filter(|l| l.is_some())
            .count()
    }
}

fn top_winner(trace: &SettleTrace) -> Result<usize> {
    trace
        .layers
        .last()
        .and_then(|l| l.fields.first())
        .and_then(|f| f.selected)
        .ok_or_else(|| StamError::ValidationError("settle trace has no top-level winner".into()))
}

fn require_single_top_unit(h: &Hierarchy) -> Result<()> {
    let top = h.layers().last().expect("hierarchy has layers");
    if top.units().len() != 1 {
        return Err(StamError::ValidationError(format!(
            "classification requires a single top-level unit, found {}",
            top.units().len()
        )));
    }
    Ok(())
}

/// Settles every probe frozen and gives each top-level winning centroid the
/// majority vote of the probe labels it attracted (ties to the lower label).
pub fn build_label_map(h: &Hierarchy, probes: &[(Vec<f64>, u32)]) -> Result<LabelMap> {
    if probes.is_empty() {
        return Err(StamError::EmptyInput);
    }
    require_single_top_unit(h)?;
    let mut votes: BTreeMap<usize, BTreeMap<u32, usize>> = BTreeMap::new();
    for (frame, label) in probes {
        let trace = h.settle(frame)?;
        let winner = top_winner(&trace)?;
        *votes.entry(winner).or_default().entry(*label).or_default() += 1;
    }
    let mut labels: Vec<Vec<Vec<Option<u32>>>> = h
        .layers()
        .iter()
        .map(|l| l.units().iter().map(|u| vec![None; u.len()]).collect())
        .collect();
    let top = labels.len() - 1;
    for (centroid, tally) in votes {
        // majority, ties to the lower label (BTreeMap iterates ascending)
        let mut best: Option<(u32, usize)> = None;
        for (&label, &n) in &tally {
            if best.is_none_or(|(_, bn)| n > bn) {
                best = Some((label, n));
            }
        }
        labels[top][0][centroid] = best.map(|(l, _)| l);
    }
    Ok(LabelMap { labels })
}

/// Frozen settle, then the top-level winner's label.
pub fn classify(h: &Hierarchy, label_map: &LabelMap, frame: &[f64]) -> Result<u32> {
    require_single_top_unit(h)?;
    let trace = h.settle(frame)?;
    let winner = top_winner(&trace)?;
    label_map
        .top_label(winner)
        .ok_or(StamError::UnlabeledCentroid { index: winner })
}

/// Accuracy drop on old classes; negative values are backward transfer.
pub fn forgetting_score(acc_before: f64, acc_after: f64) -> f64 {
    acc_before - acc_after
}

/// For each prototype, the distance to the unit's nearest centroid
/// (infinity when the unit is empty). A prototype counts as lost when no
/// centroid lies within the unit's novelty radius.
pub fn centroid_drift(unit: &StamUnit, prototypes: &[Vec<f64>]) -> Result<Vec<f64>> {
    prototypes
        .iter()
        .map(|p| {
            if p.len() != unit.dim() {
                return Err(StamError::DimensionMismatch {
                    expected: unit.dim(),
                    actual: p.len(),
                });
            }
            match unit.nearest_to_slice(p) {
                Ok((_, d)) => Ok(d),
                Err(StamError::EmptyUnit) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn drift_is_lost(distance: f64, theta_new: f64) -> bool {
    distance > theta_new
}

/// What the engine actually stores: centroid records only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryAudit {
    /// Total stored real numbers, sum over units of `centroids * dim`.
    pub stored_reals: usize,
    pub centroid_records: usize,
    /// Total assignment-count mass (bookkeeping integers, not exemplars).
    pub count_mass: u64,
    /// (layer, unit, centroid records, stored reals) per unit.
    pub per_unit: Vec<(usize, usize, usize, usize)>,
}

pub fn memory_audit(h: &Hierarchy) -> MemoryAudit {
    let mut per_unit = Vec::new();
    let mut stored_reals = 0;
    let mut centroid_records = 0;
    let mut count_mass = 0;
    for (li, layer) in h.layers().iter().enumerate() {
        for (ui, unit) in layer.units().iter().enumerate() {
            let reals = unit.len() * unit.dim();
            per_unit.push((li, ui, unit.len(), reals));
            stored_reals += reals;
            centroid_records += unit.len();
            count_mass += unit.count_mass();
        }
    }
    MemoryAudit {
        stored_reals,
        centroid_records,
        count_mass,
        per_unit,
    }
}

/// Mean squared elementwise difference.
pub fn reconstruction_mse(original: &[f64], reconstruction: &[f64]) -> Result<f64> {
    if original.len() != reconstruction.len() {
        return Err(StamError::LengthMismatch {
            expected: original.len(),
            actual: reconstruction.len(),
        });
    }
    if original.is_empty() {
        return Err(StamError::EmptyInput);
    }
    let sum: f64 = original
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / original.len() as f64)
}

/// One evaluation pass's metrics, converted to CSV rows for the report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub purity: f64,
    pub accuracy_per_phase: Vec<(u32, f64)>,
    /// Per-phase accuracy drop against a baseline report, when one was given.
    pub forgetting: Vec<(u32, f64)>,
    /// Mean distance from each prototype to its nearest bottom-layer
    /// centroid; only available for synthetic streams.
    pub drift_per_prototype: Option<Vec<f64>>,
    pub reconstruction_mse: f64,
    /// (layer, unit, centroid count).
    pub centroid_counts: Vec<(usize, usize, usize)>,
}

impl MetricsReport {
    /// Headline forgetting: the oldest phase's value.
    pub fn forgetting_headline(&self) -> Option<f64> {
        self.forgetting.first().map(|(_, v)| *v)
    }

    pub fn accuracy(&self, phase: u32) -> Option<f64> {
        self.accuracy_per_phase
            .iter()
            .find(|(p, _)| *p == phase)
            .map(|(_, v)| *v)
    }

    pub fn rows(&self) -> Vec<CsvRow> {
        let mut rows = vec![CsvRow::new("all", "purity", self.purity)];
        for (phase, acc) in &self.accuracy_per_phase {
            rows.push(CsvRow::new(phase.to_string(), "accuracy_per_phase", *acc));
        }
        for (phase, f) in &self.forgetting {
            rows.push(CsvRow::new(phase.to_string(), "forgetting", *f));
        }
        if let Some(drift) = &self.drift_per_prototype {
            for (i, d) in drift.iter().enumerate() {
                rows.push(CsvRow::new(i.to_string(), "drift_per_prototype", *d));
            }
        }
        rows.push(CsvRow::new("all", "reconstruction_mse", self.reconstruction_mse));
        for (layer, unit, count) in &self.centroid_counts {
            rows.push(CsvRow::new(
                format!("L{}U{}", layer + 1, unit),
                "centroid_counts",
                *count as f64,
            ));
        }
        rows
    }
}

/// Mean distance from each prototype's patches to the nearest centroid of
/// the bottom-layer unit covering that patch; infinity propagates when any
/// unit has lost the prototype entirely.
pub fn bottom_layer_drift(h: &Hierarchy, prototypes: &[Vec<f64>]) -> Result<Vec<f64>> {
    let layer = &h.layers()[0];
    let spec = layer.spec();
    let mut out = Vec::with_capacity(prototypes.len());
    for proto in prototypes {
        let mut total = 0.0;
        for (field, unit) in layer.fields().iter().zip(layer.units()) {
            let patch = extract_patch(proto, spec.input_height, spec.input_width, field)?;
            let d = centroid_drift(unit, std::slice::from_ref(&patch))?[0];
            total += d;
        }
        out.push(total / layer.units().len() as f64);
    }
    Ok(out)
}
