//! Multi-level networks of clustering units over receptive-field tilings.
//!
//! Level 1 units each see one patch of the input frame; every higher level
//! clusters the concatenation of the level below's centroid codes. The
//! settle loop alternates bottom-up code selection with top-down feedback:
//! each upper layer's concatenated centroid is sliced per lower field as the
//! prediction `x_b`, the lower field re-selects its centroid against the
//! blend `lambda * local + (1 - lambda) * x_b`, and the prediction error
//! `local - x_b` is recorded at every step. Learning is applied once, after
//! the final iteration, so one exemplar contributes exactly one count.

use crate::error::{Result, StamError};
use crate::unit::{Assignment, Exemplar, StamUnit, UnitConfig};

/// One unit's view into a layer input frame, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    pub row_offset: usize,
    pub col_offset: usize,
    pub height: usize,
    pub width: usize,
}

/// Geometry and unit parameters for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub field_height: usize,
    pub field_width: usize,
    pub stride: usize,
    pub unit_config: UnitConfig,
}

impl LayerSpec {
    pub fn new(
        input_height: usize,
        input_width: usize,
        field_height: usize,
        field_width: usize,
        stride: usize,
        unit_config: UnitConfig,
    ) -> Result<Self> {
        let spec = Self {
            input_height,
            input_width,
            field_height,
            field_width,
            stride,
            unit_config,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 {
            return Err(StamError::GeometryError("input frame must be non-empty".into()));
        }
        if self.field_height == 0 || self.field_width == 0 {
            return Err(StamError::GeometryError("field must be non-empty".into()));
        }
        if self.stride == 0 {
            return Err(StamError::GeometryError("stride must be >= 1".into()));
        }
        if self.field_height > self.input_height || self.field_width > self.input_width {
            return Err(StamError::GeometryError(format!(
                "field {}x{} exceeds frame {}x{}",
                self.field_height, self.field_width, self.input_height, self.input_width
            )));
        }
        if !(self.input_height - self.field_height).is_multiple_of(self.stride)
            || !(self.input_width - self.field_width).is_multiple_of(self.stride)
        {
            return Err(StamError::GeometryError(format!(
                "{}x{} fields with stride {} do not tile a {}x{} frame exactly",
                self.field_height,
                self.field_width,
                self.stride,
                self.input_height,
                self.input_width
            )));
        }
        self.unit_config.validate()
    }

    /// Dimension of one field's patch (and so of each unit's code).
    pub fn field_dim(&self) -> usize {
        self.field_height * self.field_width
    }

    /// Number of receptive fields in the tiling.
    pub fn field_count(&self) -> usize {
        let rows = (self.input_height - self.field_height) / self.stride + 1;
        let cols = (self.input_width - self.field_width) / self.stride + 1;
        rows * cols
    }

    /// Length of the layer's concatenated centroid output.
    pub fn concat_len(&self) -> usize {
        self.field_count() * self.field_dim()
    }

    pub fn frame_len(&self) -> usize {
        self.input_height * self.input_width
    }
}

/// Row-major enumeration of the receptive fields covering a layer's frame.
pub fn tile_input(spec: &LayerSpec) -> Result<Vec<ReceptiveField>> {
    spec.validate()?;
    let rows = (spec.input_height - spec.field_height) / spec.stride + 1;
    let cols = (spec.input_width - spec.field_width) / spec.stride + 1;
    let mut fields = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            fields.push(ReceptiveField {
                row_offset: r * spec.stride,
                col_offset: c * spec.stride,
                height: spec.field_height,
                width: spec.field_width,
            });
        }
    }
    Ok(fields)
}

/// Row-major copy of the sub-rectangle a field covers.
pub fn extract_patch(
    frame: &[f64],
    frame_height: usize,
    frame_width: usize,
    field: &ReceptiveField,
) -> Result<Vec<f64>> {
    if frame.len() != frame_height * frame_width {
        return Err(StamError::LengthMismatch {
            expected: frame_height * frame_width,
            actual: frame.len(),
        });
    }
    if field.row_offset + field.height > frame_height
        || field.col_offset + field.width > frame_width
    {
        return Err(StamError::GeometryError(format!(
            "field at ({},{}) size {}x{} exceeds frame {}x{}",
            field.row_offset, field.col_offset, field.height, field.width, frame_height, frame_width
        )));
    }
    let mut patch = Vec::with_capacity(field.height * field.width);
    for r in 0..field.height {
        let start = (field.row_offset + r) * frame_width + field.col_offset;
        patch.extend_from_slice(&frame[start..start + field.width]);
    }
    Ok(patch)
}

/// The contiguous segment of an upper-layer prediction that belongs to one
/// lower field, in the same order used for concatenation.
pub fn feedback_slice(
    upper_prediction: &[f64],
    lower_spec: &LayerSpec,
    field_index: usize,
) -> Result<Vec<f64>> {
    let expected = lower_spec.concat_len();
    if upper_prediction.len() != expected {
        return Err(StamError::LengthMismatch {
            expected,
            actual: upper_prediction.len(),
        });
    }
    let n = lower_spec.field_count();
    if field_index >= n {
        return Err(StamError::IndexOutOfRange {
            index: field_index,
            len: n,
        });
    }
    let d = lower_spec.field_dim();
    Ok(upper_prediction[field_index * d..(field_index + 1) * d].to_vec())
}

/// Elementwise difference between a local centroid and the feedback
/// prediction for its field.
pub fn prediction_error(local_centroid: &[f64], x_b: &[f64]) -> Result<Vec<f64>> {
    if local_centroid.len() != x_b.len() {
        return Err(StamError::LengthMismatch {
            expected: local_centroid.len(),
            actual: x_b.len(),
        });
    }
    Ok(local_centroid.iter().zip(x_b).map(|(c, b)| c - b).collect())
}

/// Per-field centroid codes of one feedforward pass plus their
/// concatenation, which forms the next layer's input frame.
#[derive(Debug, Clone)]
pub struct LayerCodes {
    pub codes: Vec<Vec<f64>>,
    pub concat: Vec<f64>,
}

/// One layer: its geometry and one unit per receptive field.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    fields: Vec<ReceptiveField>,
    units: Vec<StamUnit>,
}

impl Layer {
    pub fn new(spec: LayerSpec) -> Result<Self> {
        let fields = tile_input(&spec)?;
        let units = fields
            .iter()
            .map(|_| StamUnit::new(spec.field_dim(), spec.unit_config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            fields,
            units,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn fields(&self) -> &[ReceptiveField] {
        &self.fields
    }

    pub fn units(&self) -> &[StamUnit] {
        &self.units
    }

    pub(crate) fn units_mut(&mut self) -> &mut [StamUnit] {
        &mut self.units
    }

    /// One bottom-up pass over the layer. With `learn` each unit observes its
    /// patch and outputs the absorbing centroid's center; otherwise it
    /// recalls the nearest stored centroid.
    pub fn feedforward(&mut self, frame: &[f64], learn: bool) -> Result<LayerCodes> {
        let mut codes = Vec::with_capacity(self.fields.len());
        let mut concat = Vec::with_capacity(self.spec.concat_len());
        for (field, unit) in self.fields.iter().zip(self.units.iter_mut()) {
            let patch = extract_patch(frame, self.spec.input_height, self.spec.input_width, field)?;
            let x = Exemplar::new(patch)?;
            let code = if learn {
                let idx = unit.observe(&x)?;
                unit.centroids()[idx].center().to_vec()
            } else {
                unit.recall(&x)?
            };
            concat.extend_from_slice(&code);
            codes.push(code);
        }
        Ok(LayerCodes { codes, concat })
    }
}

/// Trace of one field through a settle call.
#[derive(Debug, Clone)]
pub struct FieldTrace {
    /// The field's selected centroid code after the final iteration. Under
    /// learning this is the pending spawn value (the patch itself) when the
    /// input was novel.
    pub local_centroid: Vec<f64>,
    /// Feedback prediction `x_b` sliced from the layer above; `None` on the
    /// pure feedforward pass and always for the top layer.
    pub feedback: Option<Vec<f64>>,
    /// `local_centroid - x_b`, or zeros when no feedback exists.
    pub error: Vec<f64>,
    /// Index of the selected centroid; `None` when a spawn is pending.
    pub selected: Option<usize>,
    /// Post-merge index of the centroid that absorbed the exemplar when
    /// learning was applied.
    pub absorbed: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub fields: Vec<FieldTrace>,
}

/// Full record of one settle call.
#[derive(Debug, Clone)]
pub struct SettleTrace {
    pub layers: Vec<LayerTrace>,
    /// Level-1 codes pasted back into frame coordinates.
    pub reconstruction: Vec<f64>,
    pub iterations_run: usize,
}

// Working state of one field during a settle call.
struct FieldWork {
    x: Vec<f64>,
    code: Vec<f64>,
    assign: Assignment,
    // a novel input keeps its would-be spawn as a selection candidate
    pending: bool,
    xb: Option<Vec<f64>>,
    err: Vec<f64>,
    absorbed: Option<usize>,
}

fn initial_select(unit: &StamUnit, x: &[f64], learn: bool) -> Result<(Vec<f64>, Assignment, bool)> {
    match unit.nearest_to_slice(x) {
        Ok((i, d)) => {
            if learn && unit.novelty_check(d) {
                Ok((x.to_vec(), Assignment::Spawn, true))
            } else {
                Ok((unit.centroids()[i].center().to_vec(), Assignment::Existing(i), false))
            }
        }
        Err(StamError::EmptyUnit) if learn => Ok((x.to_vec(), Assignment::Spawn, true)),
        Err(e) => Err(e),
    }
}

fn revise_select(
    unit: &StamUnit,
    x: &[f64],
    target: &[f64],
    pending: bool,
) -> Result<(Vec<f64>, Assignment)> {
    match unit.nearest_to_slice(target) {
        Ok((i, d)) => {
            if pending && crate::unit::euclidean(x, target) < d {
                Ok((x.to_vec(), Assignment::Spawn))
            } else {
                Ok((unit.centroids()[i].center().to_vec(), Assignment::Existing(i)))
            }
        }
        Err(StamError::EmptyUnit) if pending => Ok((x.to_vec(), Assignment::Spawn)),
        Err(e) => Err(e),
    }
}

/// Ordered layers of clustering units plus the settle-loop parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    layers: Vec<Layer>,
    settle_iterations: usize,
    blend_lambda: f64,
}

impl Hierarchy {
    pub fn new(specs: Vec<LayerSpec>, settle_iterations: usize, blend_lambda: f64) -> Result<Self> {
        if specs.is_empty() {
            return Err(StamError::ValidationError("hierarchy needs at least one layer".into()));
        }
        if !(0.0..=1.0).contains(&blend_lambda) {
            return Err(StamError::ValidationError(
                "blend_lambda must lie in [0, 1]".into(),
            ));
        }
        for pair in specs.windows(2) {
            let below = &pair[0];
            let above = &pair[1];
            if above.frame_len() != below.concat_len() {
                return Err(StamError::ValidationError(format!(
                    "layer input length {} does not match the {} values concatenated below",
                    above.frame_len(),
                    below.concat_len()
                )));
            }
        }
        let layers = specs.into_iter().map(Layer::new).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            settle_iterations,
            blend_lambda,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn settle_iterations(&self) -> usize {
        self.settle_iterations
    }

    pub fn blend_lambda(&self) -> f64 {
        self.blend_lambda
    }

    pub fn input_height(&self) -> usize {
        self.layers[0].spec.input_height
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input_width
    }

    /// Selection-only settle over a frozen hierarchy.
    pub fn settle(&self, frame: &[f64]) -> Result<SettleTrace> {
        self.settle_with_iterations(frame, self.settle_iterations)
    }

    /// Frozen settle with an explicit feedback iteration count (used for the
    /// feedback-off ablation, `iterations = 0`).
    pub fn settle_with_iterations(&self, frame: &[f64], iterations: usize) -> Result<SettleTrace> {
        let work = self.settle_pass(frame, false, iterations)?;
        self.finish_trace(work, iterations)
    }

    /// Settle and then learn: each unit absorbs its exemplar once, under the
    /// assignment standing after the final iteration.
    pub fn settle_learn(&mut self, frame: &[f64]) -> Result<SettleTrace> {
        let iterations = self.settle_iterations;
        let mut work = self.settle_pass(frame, true, iterations)?;
        for (layer, states) in self.layers.iter_mut().zip(work.iter_mut()) {
            for (unit, state) in layer.units.iter_mut().zip(states.iter_mut()) {
                let x = Exemplar::new(state.x.clone())?;
                let outcome = unit.absorb(&x, state.assign)?;
                state.absorbed = Some(outcome.index);
            }
        }
        self.finish_trace(work, iterations)
    }

    fn settle_pass(&self, frame: &[f64], learn: bool, iterations: usize) -> Result<Vec<Vec<FieldWork>>> {
        let bottom = &self.layers[0].spec;
        if frame.len() != bottom.frame_len() {
            return Err(StamError::LengthMismatch {
                expected: bottom.frame_len(),
                actual: frame.len(),
            });
        }

        // iteration 0: pure feedforward
        let mut work: Vec<Vec<FieldWork>> = Vec::with_capacity(self.layers.len());
        let mut input = frame.to_vec();
        for layer in &self.layers {
            let mut states = Vec::with_capacity(layer.fields.len());
            for (field, unit) in layer.fields.iter().zip(&layer.units) {
                let x = extract_patch(&input, layer.spec.input_height, layer.spec.input_width, field)?;
                let (code, assign, pending) = initial_select(unit, &x, learn)?;
                let err = vec![0.0; code.len()];
                states.push(FieldWork {
                    x,
                    code,
                    assign,
                    pending,
                    xb: None,
                    err,
                    absorbed: None,
                });
            }
            input = concat_codes(&states);
            work.push(states);
        }

        let lambda = self.blend_lambda;
        for _ in 0..iterations {
            // top-down: each upper layer's concatenated centroid, sliced per
            // lower field, revises the lower selection
            for l in (0..self.layers.len() - 1).rev() {
                let prediction = concat_codes(&work[l + 1]);
                let lower = &self.layers[l];
                for (f, state) in work[l].iter_mut().enumerate() {
                    let xb = feedback_slice(&prediction, &lower.spec, f)?;
                    let target: Vec<f64> = state
                        .code
                        .iter()
                        .zip(&xb)
                        .map(|(c, b)| lambda * c + (1.0 - lambda) * b)
                        .collect();
                    let (code, assign) =
                        revise_select(&lower.units[f], &state.x, &target, state.pending)?;
                    state.err = prediction_error(&code, &xb)?;
                    state.code = code;
                    state.assign = assign;
                    state.xb = Some(xb);
                }
            }
            // bottom-up: refresh upper codes from the revised lower codes
            for l in 1..self.layers.len() {
                let input = concat_codes(&work[l - 1]);
                let layer = &self.layers[l];
                for (f, state) in work[l].iter_mut().enumerate() {
                    let x = extract_patch(
                        &input,
                        layer.spec.input_height,
                        layer.spec.input_width,
                        &layer.fields[f],
                    )?;
                    let (code, assign, pending) = initial_select(&layer.units[f], &x, learn)?;
                    state.x = x;
                    state.code = code;
                    state.assign = assign;
                    state.pending = pending;
                    if let Some(xb) = &state.xb {
                        state.err = prediction_error(&state.code, xb)?;
                    }
                }
            }
        }

        Ok(work)
    }

    fn finish_trace(&self, work: Vec<Vec<FieldWork>>, iterations: usize) -> Result<SettleTrace> {
        let bottom_codes: Vec<&[f64]> = work[0].iter().map(|s| s.code.as_slice()).collect();
        let reconstruction = paste_codes(&self.layers[0].spec, &self.layers[0].fields, &bottom_codes)?;
        let layers = work
            .into_iter()
            .map(|states| LayerTrace {
                fields: states
                    .into_iter()
                    .map(|s| FieldTrace {
                        local_centroid: s.code,
                        feedback: s.xb,
                        error: s.err,
                        selected: match s.assign {
                            Assignment::Spawn => None,
                            Assignment::Existing(i) => Some(i),
                        },
                        absorbed: s.absorbed,
                    })
                    .collect(),
            })
            .collect();
        Ok(SettleTrace {
            layers,
            reconstruction,
            iterations_run: iterations,
        })
    }

    /// Pastes a trace's level-1 codes back into frame coordinates; the
    /// inverse of tiling (overlapping fields are averaged).
    pub fn reconstruct(&self, trace: &SettleTrace) -> Result<Vec<f64>> {
        let layer = &self.layers[0];
        let bottom = trace
            .layers
            .first()
            .ok_or_else(|| StamError::GeometryError("trace has no layers".into()))?;
        if bottom.fields.len() != layer.fields.len() {
            return Err(StamError::GeometryError(format!(
                "trace has {} level-1 fields, hierarchy has {}",
                bottom.fields.len(),
                layer.fields.len()
            )));
        }
        let codes: Vec<&[f64]> = bottom.fields.iter().map(|f| f.local_centroid.as_slice()).collect();
        paste_codes(&layer.spec, &layer.fields, &codes)
    }
}

fn concat_codes(states: &[FieldWork]) -> Vec<f64> {
    let mut out = Vec::new();
    for s in states {
        out.extend_from_slice(&s.code);
    }
    out
}

fn paste_codes(spec: &LayerSpec, fields: &[ReceptiveField], codes: &[&[f64]]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; spec.frame_len()];
    let mut cover = vec![0u32; spec.frame_len()];
    for (field, code) in fields.iter().zip(codes) {
        if code.len() != field.height * field.width {
            return Err(StamError::GeometryError(format!(
                "code length {} does not fill a {}x{} field",
                code.len(),
                field.height,
                field.width
            )));
        }
        for r in 0..field.height {
            for c in 0..field.width {
                let i = (field.row_offset + r) * spec.input_width + field.col_offset + c;
                acc[i] += code[r * field.width + c];
                cover[i] += 1;
            }
        }
    }
    for (v, n) in acc.iter_mut().zip(&cover) {
        if *n > 1 {
            *v /= *n as f64;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ucfg(capacity: usize, theta_new: f64, theta_merge: f64) -> UnitConfig {
        UnitConfig {
            capacity,
            theta_new,
            theta_merge,
            alpha_floor: 0.0,
        }
    }

    fn spec(
        ih: usize,
        iw: usize,
        fh: usize,
        fw: usize,
        stride: usize,
        cfg: UnitConfig,
    ) -> LayerSpec {
        LayerSpec::new(ih, iw, fh, fw, stride, cfg).unwrap()
    }

    #[test]
    fn tiling_quadrants() {
        let fields = tile_input(&spec(28, 28, 14, 14, 14, ucfg(4, 1.0, 0.0))).unwrap();
        let offsets: Vec<(usize, usize)> =
            fields.iter().map(|f| (f.row_offset, f.col_offset)).collect();
        assert_eq!(offsets, vec![(0, 0), (0, 14), (14, 0), (14, 14)]);
    }

    #[test]
    fn tiling_identity() {
        let fields = tile_input(&spec(28, 28, 28, 28, 28, ucfg(4, 1.0, 0.0))).unwrap();
        assert_eq!(fields.len(), 1);
        assert_eq!(fields[0].row_offset, 0);
    }

    #[test]
    fn tiling_rejects_inexact() {
        assert!(matches!(
            LayerSpec::new(28, 28, 8, 8, 8, ucfg(4, 1.0, 0.0)),
            Err(StamError::GeometryError(_))
        ));
    }

    #[test]
    fn patch_extraction() {
        let frame = [1.0, 2.0, 3.0, 4.0];
        let full = ReceptiveField {
            row_offset: 0,
            col_offset: 0,
            height: 2,
            width: 2,
        };
        assert_eq!(extract_patch(&frame, 2, 2, &full).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let corner = ReceptiveField {
            row_offset: 1,
            col_offset: 1,
            height: 1,
            width: 1,
        };
        assert_eq!(extract_patch(&frame, 2, 2, &corner).unwrap(), vec![4.0]);
        let constant = [0.7; 4];
        assert_eq!(extract_patch(&constant, 2, 2, &full).unwrap(), vec![0.7; 4]);
        let oob = ReceptiveField {
            row_offset: 1,
            col_offset: 1,
            height: 2,
            width: 2,
        };
        assert!(matches!(
            extract_patch(&frame, 2, 2, &oob),
            Err(StamError::GeometryError(_))
        ));
    }

    #[test]
    fn feedback_slicing_partition() {
        let lower = spec(1, 6, 1, 3, 3, ucfg(4, 1.0, 0.0));
        let prediction = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(feedback_slice(&prediction, &lower, 1).unwrap(), vec![4.0, 5.0, 6.0]);
        // slice-then-concatenate reproduces the prediction bit-exactly
        let mut rebuilt = Vec::new();
        for f in 0..lower.field_count() {
            rebuilt.extend(feedback_slice(&prediction, &lower, f).unwrap());
        }
        assert_eq!(rebuilt, prediction.to_vec());

        let single = spec(1, 4, 1, 4, 4, ucfg(4, 1.0, 0.0));
        assert_eq!(
            feedback_slice(&[9.0, 8.0, 7.0, 6.0], &single, 0).unwrap(),
            vec![9.0, 8.0, 7.0, 6.0]
        );
        assert!(matches!(
            feedback_slice(&prediction, &lower, 2),
            Err(StamError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            feedback_slice(&prediction[..4], &lower, 0),
            Err(StamError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn prediction_error_cases() {
        assert_eq!(prediction_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(prediction_error(&[3.0, 0.0], &[1.0, 1.0]).unwrap(), vec![2.0, -1.0]);
        assert_eq!(prediction_error(&[4.0, 5.0], &[0.0, 0.0]).unwrap(), vec![4.0, 5.0]);
        assert!(matches!(
            prediction_error(&[1.0], &[1.0, 2.0]),
            Err(StamError::LengthMismatch { .. })
        ));
    }

    fn single_layer(centroid_seed: &[&[f64]]) -> Hierarchy {
        let mut h = Hierarchy::new(
            vec![spec(1, 2, 1, 2, 2, ucfg(8, 0.5, 0.0))],
            0,
            0.5,
        )
        .unwrap();
        for c in centroid_seed {
            h.layers_mut()[0].units_mut()[0]
                .spawn_cluster(&Exemplar::new(c.to_vec()).unwrap())
                .unwrap();
        }
        h
    }

    #[test]
    fn feedforward_frozen_matches_recall() {
        let mut h = single_layer(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let codes = h.layers_mut()[0].feedforward(&[0.9, 0.8], false).unwrap();
        assert_eq!(codes.concat, vec![1.0, 1.0]);
        assert_eq!(codes.codes.len(), 1);
    }

    #[test]
    fn feedforward_identity_centroids_reproduce_patches() {
        let cfg = ucfg(8, 0.5, 0.0);
        let mut h = Hierarchy::new(vec![spec(2, 2, 1, 1, 1, cfg)], 0, 0.5).unwrap();
        let frame = [0.1, 0.4, 0.7, 1.0];
        for (u, v) in h.layers_mut()[0].units_mut().iter_mut().zip(frame) {
            u.spawn_cluster(&Exemplar::new(vec![v]).unwrap()).unwrap();
        }
        let codes = h.layers_mut()[0].feedforward(&frame, false).unwrap();
        assert_eq!(codes.concat, frame.to_vec());
    }

    // Four fields, two stored prototypes each: every concatenated code lies
    // in the enumerated product set of per-field centroids.
    #[test]
    fn feedforward_codes_lie_in_product_set() {
        let cfg = ucfg(8, 10.0, 0.0);
        let mut h = Hierarchy::new(vec![spec(1, 4, 1, 1, 1, cfg)], 0, 0.5).unwrap();
        for u in h.layers_mut()[0].units_mut() {
            u.spawn_cluster(&Exemplar::new(vec![0.0]).unwrap()).unwrap();
            u.spawn_cluster(&Exemplar::new(vec![1.0]).unwrap()).unwrap();
        }
        let mut product: Vec<Vec<f64>> = Vec::new();
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                for c in [0.0, 1.0] {
                    for d in [0.0, 1.0] {
                        product.push(vec![a, b, c, d]);
                    }
                }
            }
        }
        for probe in [[0.2, 0.9, 0.4, 0.6], [0.7, 0.1, 0.9, 0.3]] {
            let codes = h.layers_mut()[0].feedforward(&probe, false).unwrap();
            assert!(product.contains(&codes.concat));
        }
    }

    #[test]
    fn settle_t0_identity_matches_recall() {
        let h = single_layer(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let trace = h.settle(&[0.9, 0.8]).unwrap();
        assert_eq!(trace.reconstruction, vec![1.0, 1.0]);
        assert_eq!(trace.layers[0].fields[0].selected, Some(1));
        assert_eq!(trace.layers[0].fields[0].error, vec![0.0, 0.0]);
        assert!(trace.layers[0].fields[0].feedback.is_none());
    }

    fn two_level_consistent() -> Hierarchy {
        // two level-1 fields of width 2, one top unit over their concatenation
        let l1 = spec(1, 4, 1, 2, 2, ucfg(8, 0.5, 0.0));
        let l2 = spec(1, 4, 1, 4, 4, ucfg(8, 0.5, 0.0));
        let mut h = Hierarchy::new(vec![l1, l2], 3, 0.5).unwrap();
        let pa = vec![0.0, 0.1];
        let pb = vec![0.9, 1.0];
        for u in h.layers_mut()[0].units_mut() {
            u.spawn_cluster(&Exemplar::new(pa.clone()).unwrap()).unwrap();
            u.spawn_cluster(&Exemplar::new(pb.clone()).unwrap()).unwrap();
        }
        let top: Vec<f64> = [pa.clone(), pb.clone()].concat();
        h.layers_mut()[1].units_mut()[0]
            .spawn_cluster(&Exemplar::new(top).unwrap())
            .unwrap();
        h
    }

    #[test]
    fn settle_consistent_model_has_zero_errors() {
        let h = two_level_consistent();
        let trace = h.settle(&[0.05, 0.1, 0.85, 0.95]).unwrap();
        for field in &trace.layers[0].fields {
            assert!(field.feedback.is_some());
            assert!(field.error.iter().all(|e| *e == 0.0));
        }
    }

    #[test]
    fn error_identity_holds_at_every_field() {
        let h = two_level_consistent();
        // an input whose right half contradicts the stored top code
        let trace = h.settle(&[0.05, 0.1, 0.05, 0.1]).unwrap();
        for layer in &trace.layers {
            for field in &layer.fields {
                match &field.feedback {
                    Some(xb) => {
                        for ((c, b), e) in field
                            .local_centroid
                            .iter()
                            .zip(xb)
                            .zip(&field.error)
                        {
                            assert_eq!(c - b, *e);
                        }
                    }
                    None => assert!(field.error.iter().all(|e| *e == 0.0)),
                }
            }
        }
    }

    #[test]
    fn blend_endpoints() {
        let l1 = spec(1, 4, 1, 2, 2, ucfg(8, 0.5, 0.0));
        let l2 = spec(1, 4, 1, 4, 4, ucfg(8, 0.5, 0.0));
        for lambda in [1.0, 0.0] {
            let mut h = Hierarchy::new(vec![l1.clone(), l2.clone()], 2, lambda).unwrap();
            for u in h.layers_mut()[0].units_mut() {
                u.spawn_cluster(&Exemplar::new(vec![0.0, 0.0]).unwrap()).unwrap();
                u.spawn_cluster(&Exemplar::new(vec![1.0, 1.0]).unwrap()).unwrap();
            }
            // top unit predicts the all-zero composite
            h.layers_mut()[1].units_mut()[0]
                .spawn_cluster(&Exemplar::new(vec![0.0; 4]).unwrap())
                .unwrap();
            let input = [0.9, 0.9, 0.9, 0.9];
            let t0 = h.settle_with_iterations(&input, 0).unwrap();
            let tn = h.settle(&input).unwrap();
            if lambda == 1.0 {
                // feedback ignored: same selection as the pure pass
                for (a, b) in t0.layers[0].fields.iter().zip(&tn.layers[0].fields) {
                    assert_eq!(a.selected, b.selected);
                }
            } else {
                // revision target is exactly x_b: the top prediction wins
                for field in &tn.layers[0].fields {
                    assert_eq!(field.local_centroid, vec![0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn learn_settle_counts_each_exemplar_once() {
        let l1 = spec(1, 4, 1, 2, 2, ucfg(8, 0.5, 0.2));
        let l2 = spec(1, 4, 1, 4, 4, ucfg(8, 0.5, 0.2));
        let mut h = Hierarchy::new(vec![l1, l2], 3, 0.5).unwrap();
        let frames = [
            [0.0, 0.1, 0.9, 1.0],
            [0.05, 0.1, 0.85, 0.95],
            [0.9, 1.0, 0.0, 0.1],
        ];
        for (i, frame) in frames.iter().cycle().take(30).enumerate() {
            let mass_before: Vec<u64> = h
                .layers()
                .iter()
                .flat_map(|l| l.units().iter().map(|u| u.count_mass()))
                .collect();
            let trace = h.settle_learn(frame).unwrap();
            let mass_after: Vec<u64> = h
                .layers()
                .iter()
                .flat_map(|l| l.units().iter().map(|u| u.count_mass()))
                .collect();
            for (b, a) in mass_before.iter().zip(&mass_after) {
                assert_eq!(a - b, 1, "settle {i} absorbed more than one count");
            }
            for layer in &trace.layers {
                for field in &layer.fields {
                    assert!(field.absorbed.is_some());
                }
            }
        }
    }

    #[test]
    fn settle_is_deterministic() {
        let mut h1 = two_level_consistent();
        let mut h2 = two_level_consistent();
        let frames = [[0.0, 0.1, 0.9, 1.0], [0.4, 0.5, 0.2, 0.3]];
        for f in frames.iter().cycle().take(20) {
            h1.settle_learn(f).unwrap();
            h2.settle_learn(f).unwrap();
        }
        assert_eq!(h1, h2);
        let t1 = h1.settle(&frames[0]).unwrap();
        let t2 = h2.settle(&frames[0]).unwrap();
        assert_eq!(t1.reconstruction, t2.reconstruction);
    }

    #[test]
    fn reconstruction_is_inverse_of_tiling() {
        let cfg = ucfg(8, 10.0, 0.0);
        let mut h = Hierarchy::new(vec![spec(2, 2, 1, 1, 1, cfg)], 0, 0.5).unwrap();
        let frame = [0.1, 0.4, 0.7, 1.0];
        for (u, v) in h.layers_mut()[0].units_mut().iter_mut().zip(frame) {
            u.spawn_cluster(&Exemplar::new(vec![v]).unwrap()).unwrap();
        }
        let trace = h.settle(&frame).unwrap();
        assert_eq!(trace.reconstruction, frame.to_vec());
        assert_eq!(h.reconstruct(&trace).unwrap(), frame.to_vec());
    }

    #[test]
    fn empty_frozen_settle_errors() {
        let h = Hierarchy::new(
            vec![spec(1, 2, 1, 2, 2, ucfg(8, 0.5, 0.0))],
            0,
            0.5,
        )
        .unwrap();
        assert!(matches!(h.settle(&[0.1, 0.2]), Err(StamError::EmptyUnit)));
    }

    #[test]
    fn hierarchy_rejects_mismatched_layers() {
        let l1 = spec(1, 4, 1, 2, 2, ucfg(8, 0.5, 0.0));
        let bad_top = spec(1, 6, 1, 6, 6, ucfg(8, 0.5, 0.0));
        assert!(matches!(
            Hierarchy::new(vec![l1, bad_top], 0, 0.5),
            Err(StamError::ValidationError(_))
        ));
    }
}
