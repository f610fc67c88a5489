//! Data ingestion and stream construction: IDX container parsing/writing,
//! seeded synthetic prototype streams, class-incremental schedules and the
//! brightness-shift transform.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, StamError};

pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;
pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;

/// A set of frames in [0,1] with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Vec<f64>>,
    pub height: usize,
    pub width: usize,
    pub labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(
        frames: Vec<Vec<f64>>,
        height: usize,
        width: usize,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let dim = height * width;
        if dim == 0 {
            return Err(StamError::ValidationError("dataset frames must be non-empty".into()));
        }
        for f in &frames {
            if f.len() != dim {
                return Err(StamError::LengthMismatch {
                    expected: dim,
                    actual: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(StamError::ValidationError(
                    "frame values must lie in [0, 1]".into(),
                ));
            }
        }
        if let Some(l) = &labels {
            if l.len() != frames.len() {
                return Err(StamError::LengthMismatch {
                    expected: frames.len(),
                    actual: l.len(),
                });
            }
        }
        Ok(Self {
            frames,
            height,
            width,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Distinct labels in ascending order; empty when unlabeled.
    pub fn label_alphabet(&self) -> Vec<u32> {
        match &self.labels {
            Some(l) => {
                let set: BTreeSet<u32> = l.iter().copied().collect();
                set.into_iter().collect()
            }
            None => Vec::new(),
        }
    }
}

/// Parsed content of one IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxContent {
    /// 3-D uint8 tensor, scaled by 1/255 into frames.
    Images { frames: Vec<Vec<f64>>, height: usize, width: usize },
    /// 1-D uint8 label list.
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(StamError::TruncatedFile {
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Big-endian IDX parse with exact byte accounting:
/// `total = 4 + 4 * ndims + product(dims)`.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxContent> {
    let magic = be_u32(bytes, 0)?;
    match magic {
        IDX_MAGIC_LABELS => {
            let n = be_u32(bytes, 4)? as usize;
            let total = 8 + n;
            if bytes.len() < total {
                return Err(StamError::TruncatedFile {
                    expected: total,
                    actual: bytes.len(),
                });
            }
            if bytes.len() > total {
                return Err(StamError::TrailingBytes {
                    expected: total,
                    actual: bytes.len(),
                });
            }
            Ok(IdxContent::Labels(bytes[8..].to_vec()))
        }
        IDX_MAGIC_IMAGES => {
            let n = be_u32(bytes, 4)? as usize;
            let height = be_u32(bytes, 8)? as usize;
            let width = be_u32(bytes, 12)? as usize;
            let total = 16 + n * height * width;
            if bytes.len() < total {
                return Err(StamError::TruncatedFile {
                    expected: total,
                    actual: bytes.len(),
                });
            }
            if bytes.len() > total {
                return Err(StamError::TrailingBytes {
                    expected: total,
                    actual: bytes.len(),
                });
            }
            let dim = height * width;
            let frames = bytes[16..]
                .chunks_exact(dim)
                .map(|chunk| chunk.iter().map(|&b| b as f64 / 255.0).collect())
                .collect();
            Ok(IdxContent::Images {
                frames,
                height,
                width,
            })
        }
        other => Err(StamError::BadMagic(other)),
    }
}

/// Companion writer: quantizes frames to uint8 with `round(255 * v)`.
pub fn write_idx_images(frames: &[Vec<f64>], height: usize, width: usize) -> Result<Vec<u8>> {
    let dim = height * width;
    let mut out = Vec::with_capacity(16 + frames.len() * dim);
    out.extend_from_slice(&IDX_MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_be_bytes());
    out.extend_from_slice(&(height as u32).to_be_bytes());
    out.extend_from_slice(&(width as u32).to_be_bytes());
    for f in frames {
        if f.len() != dim {
            return Err(StamError::LengthMismatch {
                expected: dim,
                actual: f.len(),
            });
        }
        out.extend(f.iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Seeded generator of noisy views of fixed random prototypes.
#[derive(Debug, Clone)]
pub struct SynthSampler {
    prototypes: Vec<Vec<f64>>,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl SynthSampler {
    /// A sampler over existing prototypes with a fresh seeded noise stream.
    pub fn reseeded(prototypes: Vec<Vec<f64>>, sigma: f64, seed: u64) -> Self {
        Self {
            prototypes,
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    /// One noisy view of the given prototype, clamped to [0,1].
    pub fn sample(&mut self, label: u32) -> Vec<f64> {
        let proto = &self.prototypes[label as usize];
        if self.sigma == 0.0 {
            return proto.clone();
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma >= 0");
        proto
            .iter()
            .map(|&m| (m + normal.sample(&mut self.rng)).clamp(0.0, 1.0))
            .collect()
    }

}

/// Endless stream of noisy views of uniformly drawn prototypes, labeled
/// with the prototype index.
impl Iterator for SynthSampler {
    type Item = (Vec<f64>, u32);

    fn next(&mut self) -> Option<(Vec<f64>, u32)> {
        let label = self.rng.random_range(0..self.prototypes.len()) as u32;
        Some((self.sample(label), label))
    }
}

/// Draws `k` prototype frames uniformly in [0,1] from a seeded generator and
/// returns them with a sampler for noisy views. Same seed, same sequence.
pub fn synth_prototypes(
    k: usize,
    height: usize,
    width: usize,
    sigma: f64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, SynthSampler)> {
    if k == 0 {
        return Err(StamError::ValidationError("need at least one prototype".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(StamError::ValidationError("sigma must be >= 0".into()));
    }
    let dim = height * width;
    if dim == 0 {
        return Err(StamError::ValidationError("prototype frames must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let sampler = SynthSampler {
        prototypes: prototypes.clone(),
        sigma,
        rng,
    };
    Ok((prototypes, sampler))
}

/// An ordered, phased stream of dataset indices.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSchedule {
    /// (frame index, phase id) in stream order.
    pub items: Vec<(usize, u32)>,
    /// (phase id, allowed label set), phase ids contiguous from 0.
    pub phases: Vec<(u32, BTreeSet<u32>)>,
}

/// For each phase in order, samples `per_phase_count` frames without
/// replacement (seeded) whose labels belong to that phase's set.
pub fn class_incremental_schedule(
    dataset: &Dataset,
    phase_label_sets: &[BTreeSet<u32>],
    per_phase_count: usize,
    seed: u64,
) -> Result<StreamSchedule> {
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| StamError::ValidationError("schedule requires a labeled dataset".into()))?;
    if phase_label_sets.is_empty() {
        return Err(StamError::ValidationError("schedule needs at least one phase".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(phase_label_sets.len() * per_phase_count);
    let mut phases = Vec::with_capacity(phase_label_sets.len());
    for (phase_id, set) in phase_label_sets.iter().enumerate() {
        let mut pool: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| set.contains(l))
            .map(|(i, _)| i)
            .collect();
        if pool.len() < per_phase_count {
            return Err(StamError::InsufficientData(format!(
                "phase {} needs {} frames with labels {:?}, only {} available",
                phase_id,
                per_phase_count,
                set,
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        items.extend(pool[..per_phase_count].iter().map(|&i| (i, phase_id as u32)));
        phases.push((phase_id as u32, set.clone()));
    }
    Ok(StreamSchedule { items, phases })
}

/// Elementwise `frame + delta`, clamped to [0,1].
pub fn brightness_shift(frame: &[f64], delta: f64) -> Vec<f64> {
    frame.iter().map(|&v| (v + delta).clamp(0.0, 1.0)).collect()
}
