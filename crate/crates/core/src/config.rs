//! Run configuration: a flat `key = value` text format with `#` comments and
//! comma-separated list values. Unknown keys are errors; every key has a
//! documented default, so the empty file is a valid config. All construction
//! invariants are validated before any work starts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, StamError};
use crate::hierarchy::{Hierarchy, LayerSpec};
use crate::unit::UnitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Synth,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Number of generated prototypes (and so of class labels).
    pub classes: usize,
    /// Gaussian noise level around each prototype.
    pub sigma: f64,
    /// Size of the materialized dataset.
    pub samples: usize,
}

/// Geometry of one layer. The bottom layer tiles the input frame; every
/// higher layer groups a fixed number of lower fields into one unit
/// (`group = 0` means all of them).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerGeometry {
    Tiled {
        field_height: usize,
        field_width: usize,
        stride: usize,
    },
    Grouped {
        group: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub geometry: LayerGeometry,
    pub unit: UnitConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub stream: StreamKind,
    pub input_height: usize,
    pub input_width: usize,
    pub synth: SynthParams,
    pub idx_images: Option<String>,
    pub idx_labels: Option<String>,
    /// Per-phase allowed label sets; empty means one phase over all labels.
    pub phases: Vec<BTreeSet<u32>>,
    pub per_phase_count: usize,
    pub settle_iterations: usize,
    pub blend_lambda: f64,
    pub layers: Vec<LayerParams>,
    /// Labeled probes per class for few-shot centroid labeling.
    pub probe_per_class: usize,
    /// Held-out test frames per class.
    pub test_per_class: usize,
}

const DEFAULT_CAPACITY: usize = 16;
const DEFAULT_THETA_NEW: f64 = 0.5;
const DEFAULT_THETA_MERGE: f64 = 0.2;
const DEFAULT_ALPHA_FLOOR: f64 = 0.01;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stream: StreamKind::Synth,
            input_height: 4,
            input_width: 4,
            synth: SynthParams {
                classes: 5,
                sigma: 0.05,
                samples: 2000,
            },
            idx_images: None,
            idx_labels: None,
            phases: Vec::new(),
            per_phase_count: 400,
            settle_iterations: 3,
            blend_lambda: 0.5,
            layers: vec![LayerParams {
                geometry: LayerGeometry::Tiled {
                    field_height: 4,
                    field_width: 4,
                    stride: 4,
                },
                unit: UnitConfig {
                    capacity: DEFAULT_CAPACITY,
                    theta_new: DEFAULT_THETA_NEW,
                    theta_merge: DEFAULT_THETA_MERGE,
                    alpha_floor: DEFAULT_ALPHA_FLOOR,
                },
            }],
            probe_per_class: 5,
            test_per_class: 20,
        }
    }
}

impl RunConfig {
    /// Builds the layer specs, chaining each layer's input to the
    /// concatenated output of the one below.
    pub fn build_specs(&self) -> Result<Vec<LayerSpec>> {
        let mut specs: Vec<LayerSpec> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let spec = match (i, &layer.geometry) {
                (0, LayerGeometry::Tiled { field_height, field_width, stride }) => LayerSpec::new(
                    self.input_height,
                    self.input_width,
                    *field_height,
                    *field_width,
                    *stride,
                    layer.unit,
                )?,
                (0, LayerGeometry::Grouped { .. }) => {
                    return Err(StamError::ValidationError(
                        "layer 1 must use field geometry, not a group".into(),
                    ))
                }
                (_, LayerGeometry::Grouped { group }) => {
                    let below = &specs[i - 1];
                    let fields = below.field_count();
                    let group = if *group == 0 { fields } else { *group };
                    if group == 0 || !fields.is_multiple_of(group) {
                        return Err(StamError::ValidationError(format!(
                            "layer {} group {} does not divide the {} fields below",
                            i + 1,
                            group,
                            fields
                        )));
                    }
                    let field_width = group * below.field_dim();
                    LayerSpec::new(1, below.concat_len(), 1, field_width, field_width, layer.unit)?
                }
                (_, LayerGeometry::Tiled { .. }) => {
                    return Err(StamError::ValidationError(format!(
                        "layer {} must use a group, not field geometry",
                        i + 1
                    )))
                }
            };
            specs.push(spec);
        }
        Ok(specs)
    }

    /// A fresh, untrained hierarchy matching this configuration.
    pub fn hierarchy(&self) -> Result<Hierarchy> {
        Hierarchy::new(self.build_specs()?, self.settle_iterations, self.blend_lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(StamError::ValidationError("layer_count must be >= 1".into()));
        }
        if self.synth.classes == 0 {
            return Err(StamError::ValidationError("synth_classes must be >= 1".into()));
        }
        if !(self.synth.sigma.is_finite() && self.synth.sigma >= 0.0) {
            return Err(StamError::ValidationError("synth_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.blend_lambda) {
            return Err(StamError::ValidationError("blend_lambda must lie in [0, 1]".into()));
        }
        if self.stream == StreamKind::Idx
            && (self.idx_images.is_none() || self.idx_labels.is_none())
        {
            return Err(StamError::ValidationError(
                "stream = idx requires idx_images and idx_labels".into(),
            ));
        }
        for set in &self.phases {
            if set.is_empty() {
                return Err(StamError::ValidationError("phase label sets must be non-empty".into()));
            }
        }
        if self.probe_per_class == 0 {
            return Err(StamError::ValidationError("probe_per_class must be >= 1".into()));
        }
        // exercises layer-spec and unit-config invariants, including
        // theta_merge < theta_new and exact tiling
        self.build_specs()?;
        Ok(())
    }
}

struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| StamError::ParseError {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(StamError::ParseError {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (value, line_no)).is_some() {
                return Err(StamError::ParseError {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((value, line)) => value.parse().map_err(|_| StamError::ParseError {
                line,
                message: format!("invalid value `{value}` for `{key}`"),
            }),
        }
    }

    fn take_opt_string(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn take_label_set(&mut self, key: &str) -> Result<Option<BTreeSet<u32>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((value, line)) => {
                let mut set = BTreeSet::new();
                for part in value.split(',') {
                    let part = part.trim();
                    let label = part.parse().map_err(|_| StamError::ParseError {
                        line,
                        message: format!("invalid label `{part}` in `{key}`"),
                    })?;
                    set.insert(label);
                }
                Ok(Some(set))
            }
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(StamError::ParseError {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

impl FromStr for StreamKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "synth" => Ok(StreamKind::Synth),
            "idx" => Ok(StreamKind::Idx),
            _ => Err(()),
        }
    }
}

/// Parses and validates a config from text. Defaults fill every absent key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(text)?;
    let defaults = RunConfig::default();

    let seed = raw.take("seed", defaults.seed)?;
    let stream = raw.take("stream", defaults.stream)?;
    let input_height = raw.take("input_height", defaults.input_height)?;
    let input_width = raw.take("input_width", defaults.input_width)?;
    let synth = SynthParams {
        classes: raw.take("synth_classes", defaults.synth.classes)?,
        sigma: raw.take("synth_sigma", defaults.synth.sigma)?,
        samples: raw.take("synth_samples", defaults.synth.samples)?,
    };
    let idx_images = raw.take_opt_string("idx_images");
    let idx_labels = raw.take_opt_string("idx_labels");
    let per_phase_count = raw.take("per_phase_count", defaults.per_phase_count)?;

    let mut phases = Vec::new();
    while let Some(set) = raw.take_label_set(&format!("phase{}_labels", phases.len()))? {
        phases.push(set);
    }

    let settle_iterations = raw.take("settle_iterations", defaults.settle_iterations)?;
    let blend_lambda = raw.take("blend_lambda", defaults.blend_lambda)?;

    let layer_count: usize = raw.take("layer_count", 1)?;
    let mut layers = Vec::with_capacity(layer_count);
    for i in 1..=layer_count {
        let unit = UnitConfig {
            capacity: raw.take(&format!("layer{i}_capacity"), DEFAULT_CAPACITY)?,
            theta_new: raw.take(&format!("layer{i}_theta_new"), DEFAULT_THETA_NEW)?,
            theta_merge: raw.take(&format!("layer{i}_theta_merge"), DEFAULT_THETA_MERGE)?,
            alpha_floor: raw.take(&format!("layer{i}_alpha_floor"), DEFAULT_ALPHA_FLOOR)?,
        };
        let geometry = if i == 1 {
            let field_height = raw.take(&format!("layer{i}_field_height"), input_height)?;
            let field_width = raw.take(&format!("layer{i}_field_width"), input_width)?;
            let stride = raw.take(&format!("layer{i}_stride"), field_height)?;
            LayerGeometry::Tiled {
                field_height,
                field_width,
                stride,
            }
        } else {
            LayerGeometry::Grouped {
                group: raw.take(&format!("layer{i}_group"), 0)?,
            }
        };
        layers.push(LayerParams { geometry, unit });
    }

    let probe_per_class = raw.take("probe_per_class", defaults.probe_per_class)?;
    let test_per_class = raw.take("test_per_class", defaults.test_per_class)?;

    raw.finish()?;

    let config = RunConfig {
        seed,
        stream,
        input_height,
        input_width,
        synth,
        idx_images,
        idx_labels,
        phases,
        per_phase_count,
        settle_iterations,
        blend_lambda,
        layers,
        probe_per_class,
        test_per_class,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Canonical text form: every key explicit, fixed order. Reparsing the
/// emitted text reproduces the config exactly.
pub fn emit_config(config: &RunConfig) -> String {
    let mut out = String::new();
    out.push_str("# run\n");
    let _ = writeln!(out, "seed = {}", config.seed);
    let stream = match config.stream {
        StreamKind::Synth => "synth",
        StreamKind::Idx => "idx",
    };
    let _ = writeln!(out, "stream = {stream}");
    let _ = writeln!(out, "input_height = {}", config.input_height);
    let _ = writeln!(out, "input_width = {}", config.input_width);

    out.push_str("\n# synth stream\n");
    let _ = writeln!(out, "synth_classes = {}", config.synth.classes);
    let _ = writeln!(out, "synth_sigma = {}", fmt_f64(config.synth.sigma));
    let _ = writeln!(out, "synth_samples = {}", config.synth.samples);

    if config.idx_images.is_some() || config.idx_labels.is_some() {
        out.push_str("\n# idx stream\n");
        if let Some(p) = &config.idx_images {
            let _ = writeln!(out, "idx_images = {p}");
        }
        if let Some(p) = &config.idx_labels {
            let _ = writeln!(out, "idx_labels = {p}");
        }
    }

    out.push_str("\n# schedule\n");
    let _ = writeln!(out, "per_phase_count = {}", config.per_phase_count);
    for (i, set) in config.phases.iter().enumerate() {
        let labels: Vec<String> = set.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(out, "phase{}_labels = {}", i, labels.join(","));
    }

    out.push_str("\n# hierarchy\n");
    let _ = writeln!(out, "settle_iterations = {}", config.settle_iterations);
    let _ = writeln!(out, "blend_lambda = {}", fmt_f64(config.blend_lambda));
    let _ = writeln!(out, "layer_count = {}", config.layers.len());
    for (idx, layer) in config.layers.iter().enumerate() {
        let i = idx + 1;
        match layer.geometry {
            LayerGeometry::Tiled {
                field_height,
                field_width,
                stride,
            } => {
                let _ = writeln!(out, "layer{i}_field_height = {field_height}");
                let _ = writeln!(out, "layer{i}_field_width = {field_width}");
                let _ = writeln!(out, "layer{i}_stride = {stride}");
            }
            LayerGeometry::Grouped { group } => {
                let _ = writeln!(out, "layer{i}_group = {group}");
            }
        }
        let _ = writeln!(out, "layer{i}_capacity = {}", layer.unit.capacity);
        let _ = writeln!(out, "layer{i}_theta_new = {}", fmt_f64(layer.unit.theta_new));
        let _ = writeln!(out, "layer{i}_theta_merge = {}", fmt_f64(layer.unit.theta_merge));
        let _ = writeln!(out, "layer{i}_alpha_floor = {}", fmt_f64(layer.unit.alpha_floor));
    }

    out.push_str("\n# evaluation\n");
    let _ = writeln!(out, "probe_per_class = {}", config.probe_per_class);
    let _ = writeln!(out, "test_per_class = {}", config.test_per_class);
    out
}
