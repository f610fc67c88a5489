//! The batch engine: deterministic dataset materialization, phased stream
//! training with a resumable cursor, the evaluation pass producing a metrics
//! report, synthetic data export and the brightness-shift scenario. Every
//! random draw derives from the config seed through fixed sub-stream tags,
//! so identical configs produce identical outputs byte for byte.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{RunConfig, StreamKind};
use crate::error::{Result, StamError};
use crate::evaluation::{
    self, build_label_map, bottom_layer_drift, classify, purity, reconstruction_mse, LabelMap,
    MetricsReport,
};
use crate::hierarchy::Hierarchy;
use crate::report::CsvRow;
use crate::streams::{
    brightness_shift, class_incremental_schedule, parse_idx, synth_prototypes, Dataset,
    IdxContent, StreamSchedule,
};

// sub-stream tags; changing these invalidates checkpoint reproducibility
const SEED_DATA: u64 = 1;
const SEED_SCHEDULE: u64 = 2;
const SEED_PROBE: u64 = 3;
const SEED_TEST: u64 = 4;

/// splitmix64-style mix of the base seed with a sub-stream tag.
pub fn sub_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

type LabeledFrames = Vec<(Vec<f64>, u32)>;

/// Full engine state: configuration, hierarchy and stream cursor.
#[derive(Debug, Clone, PartialEq)]
pub struct Engine {
    config: RunConfig,
    hierarchy: Hierarchy,
    cursor: u64,
}

impl Engine {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hierarchy = config.hierarchy()?;
        Ok(Self {
            config,
            hierarchy,
            cursor: 0,
        })
    }

    pub fn from_parts(config: RunConfig, hierarchy: Hierarchy, cursor: u64) -> Self {
        Self {
            config,
            hierarchy,
            cursor,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn hierarchy_mut(&mut self) -> &mut Hierarchy {
        &mut self.hierarchy
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Canonical serialized state; two engines are identical iff their
    /// digests are equal.
    pub fn state_digest(&self) -> String {
        checkpoint::checkpoint_string(&self.config, &self.hierarchy, self.cursor)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_checkpoint(path, &self.config, &self.hierarchy, self.cursor)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (config, hierarchy, cursor) = checkpoint::load_checkpoint(path)?;
        Ok(Self {
            config,
            hierarchy,
            cursor,
        })
    }

    /// The prototypes behind a synthetic stream; `None` for IDX data.
    pub fn prototypes(&self) -> Result<Option<Vec<Vec<f64>>>> {
        match self.config.stream {
            StreamKind::Synth => {
                let (protos, _) = self.synth_source()?;
                Ok(Some(protos))
            }
            StreamKind::Idx => Ok(None),
        }
    }

    fn synth_source(&self) -> Result<(Vec<Vec<f64>>, crate::streams::SynthSampler)> {
        synth_prototypes(
            self.config.synth.classes,
            self.config.input_height,
            self.config.input_width,
            self.config.synth.sigma,
            sub_seed(self.config.seed, SEED_DATA),
        )
    }

    /// Materializes the dataset this run streams over. Synthetic frames are
    /// drawn round-robin across classes so every label is equally available.
    pub fn dataset(&self) -> Result<Dataset> {
        match self.config.stream {
            StreamKind::Synth => {
                let (_, mut sampler) = self.synth_source()?;
                let classes = self.config.synth.classes as u32;
                let n = self.config.synth.samples;
                let mut frames = Vec::with_capacity(n);
                let mut labels = Vec::with_capacity(n);
                for i in 0..n {
                    let label = i as u32 % classes;
                    frames.push(sampler.sample(label));
                    labels.push(label);
                }
                Dataset::new(
                    frames,
                    self.config.input_height,
                    self.config.input_width,
                    Some(labels),
                )
            }
            StreamKind::Idx => {
                let images_path = self.config.idx_images.as_ref().ok_or_else(|| {
                    StamError::ValidationError("stream = idx requires idx_images".into())
                })?;
                let labels_path = self.config.idx_labels.as_ref().ok_or_else(|| {
                    StamError::ValidationError("stream = idx requires idx_labels".into())
                })?;
                let images = parse_idx(&std::fs::read(images_path)?)?;
                let labels = parse_idx(&std::fs::read(labels_path)?)?;
                let (frames, height, width) = match images {
                    IdxContent::Images {
                        frames,
                        height,
                        width,
                    } => (frames, height, width),
                    IdxContent::Labels(_) => {
                        return Err(StamError::ValidationError(
                            "idx_images points at a label file".into(),
                        ))
                    }
                };
                let labels = match labels {
                    IdxContent::Labels(l) => l.into_iter().map(u32::from).collect(),
                    IdxContent::Images { .. } => {
                        return Err(StamError::ValidationError(
                            "idx_labels points at an image file".into(),
                        ))
                    }
                };
                if (height, width) != (self.config.input_height, self.config.input_width) {
                    return Err(StamError::ValidationError(format!(
                        "IDX frames are {height}x{width}, config expects {}x{}",
                        self.config.input_height, self.config.input_width
                    )));
                }
                Dataset::new(frames, height, width, Some(labels))
            }
        }
    }

    /// The phased stream over the dataset. With no configured phases, the
    /// whole label alphabet forms a single phase.
    pub fn schedule(&self, dataset: &Dataset) -> Result<StreamSchedule> {
        let phase_sets: Vec<BTreeSet<u32>> = if self.config.phases.is_empty() {
            let alphabet: BTreeSet<u32> = dataset.label_alphabet().into_iter().collect();
            if alphabet.is_empty() {
                return Err(StamError::ValidationError(
                    "dataset has no labels to schedule".into(),
                ));
            }
            vec![alphabet]
        } else {
            self.config.phases.clone()
        };
        class_incremental_schedule(
            dataset,
            &phase_sets,
            self.config.per_phase_count,
            sub_seed(self.config.seed, SEED_SCHEDULE),
        )
    }

    /// Consumes stream items from the cursor, settling each frame with
    /// learning. Stops after the last item whose phase id is `<=
    /// until_phase` when given. Returns the number of items consumed.
    pub fn train(&mut self, until_phase: Option<u32>) -> Result<usize> {
        let dataset = self.dataset()?;
        let schedule = self.schedule(&dataset)?;
        let mut consumed = 0;
        while (self.cursor as usize) < schedule.items.len() {
            let (frame_index, phase) = schedule.items[self.cursor as usize];
            if let Some(limit) = until_phase {
                if phase > limit {
                    break;
                }
            }
            self.hierarchy.settle_learn(&dataset.frames[frame_index])?;
            self.cursor += 1;
            consumed += 1;
        }
        Ok(consumed)
    }

    /// Held-out labeled probe and test sets, `per_class` frames each, for
    /// every class the schedule can ever present. Synthetic streams draw
    /// fresh seeded samples; IDX streams partition the dataset per class.
    fn eval_sets(&self, dataset: &Dataset) -> Result<(LabeledFrames, LabeledFrames)> {
        let schedule = self.schedule(dataset)?;
        let mut classes: BTreeSet<u32> = BTreeSet::new();
        for (_, set) in &schedule.phases {
            classes.extend(set.iter().copied());
        }
        let m = self.config.probe_per_class;
        let t = self.config.test_per_class;
        let mut probes = Vec::new();
        let mut tests = Vec::new();
        match self.config.stream {
            StreamKind::Synth => {
                let (protos, _) = self.synth_source()?;
                let mut probe_sampler = crate::streams::SynthSampler::reseeded(
                    protos.clone(),
                    self.config.synth.sigma,
                    sub_seed(self.config.seed, SEED_PROBE),
                );
                let mut test_sampler = crate::streams::SynthSampler::reseeded(
                    protos,
                    self.config.synth.sigma,
                    sub_seed(self.config.seed, SEED_TEST),
                );
                for &class in &classes {
                    if class as usize >= self.config.synth.classes {
                        return Err(StamError::ValidationError(format!(
                            "phase label {class} exceeds synth_classes"
                        )));
                    }
                    for _ in 0..m {
                        probes.push((probe_sampler.sample(class), class));
                    }
                    for _ in 0..t {
                        tests.push((test_sampler.sample(class), class));
                    }
                }
            }
            StreamKind::Idx => {
                let labels = dataset.labels.as_ref().expect("idx datasets are labeled");
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.config.seed, SEED_PROBE));
                for &class in &classes {
                    let mut pool: Vec<usize> = labels
                        .iter()
                        .enumerate()
                        .filter(|(_, l)| **l == class)
                        .map(|(i, _)| i)
                        .collect();
                    if pool.len() < m + t {
                        return Err(StamError::InsufficientData(format!(
                            "class {class} has {} frames, need {} for probes and tests",
                            pool.len(),
                            m + t
                        )));
                    }
                    pool.shuffle(&mut rng);
                    for &i in &pool[..m] {
                        probes.push((dataset.frames[i].clone(), class));
                    }
                    for &i in &pool[m..m + t] {
                        tests.push((dataset.frames[i].clone(), class));
                    }
                }
            }
        }
        Ok((probes, tests))
    }

    /// Builds the label map from held-out probes.
    pub fn label_map(&self) -> Result<LabelMap> {
        let dataset = self.dataset()?;
        let (probes, _) = self.eval_sets(&dataset)?;
        build_label_map(&self.hierarchy, &probes)
    }

    /// The full evaluation pass. A baseline report adds per-phase forgetting
    /// rows (baseline accuracy minus current accuracy).
    pub fn evaluate(&self, baseline: Option<&[CsvRow]>) -> Result<MetricsReport> {
        let dataset = self.dataset()?;
        let schedule = self.schedule(&dataset)?;
        let (probes, tests) = self.eval_sets(&dataset)?;
        let label_map = build_label_map(&self.hierarchy, &probes)?;

        let mut assignments = Vec::with_capacity(tests.len());
        let mut mse_total = 0.0;
        for (frame, label) in &tests {
            let trace = self.hierarchy.settle(frame)?;
            let winner = trace
                .layers
                .last()
                .and_then(|l| l.fields.first())
                .and_then(|f| f.selected)
                .ok_or_else(|| {
                    StamError::ValidationError("settle trace has no top-level winner".into())
                })?;
            assignments.push((winner, *label));
            mse_total += reconstruction_mse(frame, &trace.reconstruction)?;
        }
        let purity = purity(&assignments)?;
        let mse = mse_total / tests.len() as f64;

        let mut accuracy_per_phase = Vec::new();
        for (phase, labels) in &schedule.phases {
            let phase_tests: Vec<&(Vec<f64>, u32)> =
                tests.iter().filter(|(_, l)| labels.contains(l)).collect();
            let mut correct = 0;
            for (frame, label) in &phase_tests {
                match classify(&self.hierarchy, &label_map, frame) {
                    Ok(predicted) if predicted == *label => correct += 1,
                    Ok(_) | Err(StamError::UnlabeledCentroid { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            let acc = correct as f64 / phase_tests.len().max(1) as f64;
            accuracy_per_phase.push((*phase, acc));
        }

        let mut forgetting = Vec::new();
        if let Some(rows) = baseline {
            for (phase, acc) in &accuracy_per_phase {
                let key = phase.to_string();
                if let Some(base) = rows
                    .iter()
                    .find(|r| r.metric == "accuracy_per_phase" && r.phase == key)
                {
                    forgetting.push((*phase, evaluation::forgetting_score(base.value, *acc)));
                }
            }
        }

        let drift_per_prototype = match self.prototypes()? {
            Some(protos) => Some(bottom_layer_drift(&self.hierarchy, &protos)?),
            None => None,
        };

        let centroid_counts = self
            .hierarchy
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(li, layer)| {
                layer
                    .units()
                    .iter()
                    .enumerate()
                    .map(move |(ui, u)| (li, ui, u.len()))
            })
            .collect();

        Ok(MetricsReport {
            purity,
            accuracy_per_phase,
            forgetting,
            drift_per_prototype,
            reconstruction_mse: mse,
            centroid_counts,
        })
    }
}

/// Writes the synthetic dataset as IDX files (`synth-images-idx3-ubyte`,
/// `synth-labels-idx1-ubyte`). Returns the two paths.
pub fn generate_data(config: &RunConfig, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    if config.stream != StreamKind::Synth {
        return Err(StamError::ValidationError(
            "gen-data requires a synthetic stream configuration".into(),
        ));
    }
    let engine = Engine::new(config.clone())?;
    let dataset = engine.dataset()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let images_path = dir.join("synth-images-idx3-ubyte");
    let labels_path = dir.join("synth-labels-idx1-ubyte");
    let image_bytes =
        crate::streams::write_idx_images(&dataset.frames, dataset.height, dataset.width)?;
    let labels: Vec<u8> = dataset
        .labels
        .as_ref()
        .expect("synth datasets are labeled")
        .iter()
        .map(|&l| l as u8)
        .collect();
    std::fs::write(&images_path, image_bytes)?;
    std::fs::write(&labels_path, crate::streams::write_idx_labels(&labels))?;
    Ok((images_path, labels_path))
}

/// Brightness-shift scenario: records top-level agreement with pre-shift
/// assignments and mean bottom-layer centroid intensity while the hierarchy
/// keeps learning on shifted views of `frames`. Rows use the step count as
/// the phase column.
pub fn brightness_shift_scenario(
    hierarchy: &mut Hierarchy,
    frames: &[Vec<f64>],
    delta: f64,
    passes: usize,
    probe_every: usize,
) -> Result<Vec<CsvRow>> {
    if frames.is_empty() {
        return Err(StamError::EmptyInput);
    }
    if probe_every == 0 {
        return Err(StamError::ValidationError("probe_every must be >= 1".into()));
    }
    let top_winner = |h: &Hierarchy, frame: &[f64]| -> Result<Option<usize>> {
        let trace = h.settle(frame)?;
        Ok(trace
            .layers
            .last()
            .and_then(|l| l.fields.first())
            .and_then(|f| f.selected))
    };
    let reference: Vec<Option<usize>> = frames
        .iter()
        .map(|f| top_winner(hierarchy, f))
        .collect::<Result<Vec<_>>>()?;

    let shifted: Vec<Vec<f64>> = frames.iter().map(|f| brightness_shift(f, delta)).collect();
    let mut rows = Vec::new();
    let total = passes * frames.len();
    for t in 0..total {
        hierarchy.settle_learn(&shifted[t % shifted.len()])?;
        if (t + 1) % probe_every == 0 || t + 1 == total {
            let mut agree = 0;
            for (s, want) in shifted.iter().zip(&reference) {
                if top_winner(hierarchy, s)? == *want {
                    agree += 1;
                }
            }
            let agreement = agree as f64 / shifted.len() as f64;
            let bottom = &hierarchy.layers()[0];
            let mut sum = 0.0;
            let mut n = 0usize;
            for unit in bottom.units() {
                for c in unit.centroids() {
                    sum += c.center().iter().sum::<f64>();
                    n += c.center().len();
                }
            }
            let mean_intensity = if n == 0 { 0.0 } else { sum / n as f64 };
            let step = (t + 1).to_string();
            rows.push(CsvRow::new(step.clone(), "agreement", agreement));
            rows.push(CsvRow::new(step, "level1_centroid_mean", mean_intensity));
        }
    }
    Ok(rows)
}
