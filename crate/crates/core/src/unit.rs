//! Single-unit online clustering core.
//!
//! A [`StamUnit`] maintains a capacity-bounded set of centroids over a stream
//! of exemplars: nearest-centroid assignment, incremental centroid updates,
//! novelty-driven spawning, overlap-driven merging and least-recently-used
//! eviction once the capacity is reached. Centroids are the only stored
//! memory; exemplars are discarded after they are absorbed.

use crate::error::{Result, StamError};

/// One input observation or patch: a fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    values: Vec<f64>,
}

impl Exemplar {
    /// Validates that the vector is non-empty and free of NaN/Inf.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(StamError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StamError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A stored cluster centroid: the running mean of its absorbed exemplars,
/// the number absorbed (merge-additive), and the unit step of last use.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidRecord {
    center: Vec<f64>,
    count: u64,
    last_used: u64,
}

impl CentroidRecord {
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn last_used(&self) -> u64 {
        self.last_used
    }
}

/// Per-unit parameters, shared by every unit of a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitConfig {
    /// Maximum number of centroids the unit may hold.
    pub capacity: usize,
    /// Novelty distance threshold: inputs farther than this from every
    /// centroid spawn a new cluster.
    pub theta_new: f64,
    /// Merge distance threshold: centroid pairs closer than this are merged.
    /// Zero disables merging (the comparison is strict).
    pub theta_merge: f64,
    /// Minimum learning rate after count-based decay, in [0, 1].
    /// Zero gives exact running means; a positive floor keeps old centroids
    /// plastic so they drift toward recent exemplars.
    pub alpha_floor: f64,
}

impl UnitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(StamError::ValidationError("capacity must be >= 1".into()));
        }
        if !self.theta_new.is_finite() || self.theta_new <= 0.0 {
            return Err(StamError::ValidationError(
                "theta_new must be a positive finite real".into(),
            ));
        }
        if !self.theta_merge.is_finite() || self.theta_merge < 0.0 {
            return Err(StamError::ValidationError(
                "theta_merge must be a non-negative finite real".into(),
            ));
        }
        if self.theta_merge >= self.theta_new {
            return Err(StamError::ValidationError(format!(
                "theta_merge ({}) must be < theta_new ({})",
                self.theta_merge, self.theta_new
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha_floor) {
            return Err(StamError::ValidationError(
                "alpha_floor must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Euclidean distance between two equal-length slices.
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// How an exemplar was absorbed by [`StamUnit::observe`] or
/// [`StamUnit::absorb`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    /// Spawn a new centroid at the exemplar.
    Spawn,
    /// Fold the exemplar into the centroid at this index.
    Existing(usize),
}

/// Outcome of one absorbed exemplar: where the mass ended up after merging,
/// and whether a spawn or an eviction took place.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Absorption {
    /// Index of the centroid holding the exemplar in the post-merge list.
    pub index: usize,
    pub spawned: bool,
    /// Count mass removed by LRU eviction, if a spawn hit capacity.
    pub evicted_mass: u64,
}

/// One online-clustering unit: the full mutable state of a single module.
#[derive(Debug, Clone, PartialEq)]
pub struct StamUnit {
    dim: usize,
    centroids: Vec<CentroidRecord>,
    config: UnitConfig,
    step: u64,
}

impl StamUnit {
    pub fn new(dim: usize, config: UnitConfig) -> Result<Self> {
        if dim == 0 {
            return Err(StamError::ValidationError("dim must be >= 1".into()));
        }
        config.validate()?;
        Ok(Self {
            dim,
            centroids: Vec::new(),
            config,
            step: 0,
        })
    }

    /// Rebuilds a unit from checkpointed state, re-validating every invariant.
    pub fn from_parts(
        dim: usize,
        config: UnitConfig,
        step: u64,
        centroids: Vec<(Vec<f64>, u64, u64)>,
    ) -> Result<Self> {
        let mut unit = Self::new(dim, config)?;
        unit.step = step;
        if centroids.len() > config.capacity {
            return Err(StamError::ValidationError(format!(
                "{} centroids exceed capacity {}",
                centroids.len(),
                config.capacity
            )));
        }
        for (center, count, last_used) in centroids {
            if center.len() != dim {
                return Err(StamError::DimensionMismatch {
                    expected: dim,
                    actual: center.len(),
                });
            }
            if center.iter().any(|v| !v.is_finite()) {
                return Err(StamError::NonFinite);
            }
            if count == 0 {
                return Err(StamError::ValidationError("centroid count must be >= 1".into()));
            }
            if last_used > step {
                return Err(StamError::ValidationError(
                    "centroid last_used exceeds unit step".into(),
                ));
            }
            unit.centroids.push(CentroidRecord {
                center,
                count,
                last_used,
            });
        }
        Ok(unit)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &UnitConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn centroids(&self) -> &[CentroidRecord] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Sum of assignment counts over all centroids.
    pub fn count_mass(&self) -> u64 {
        self.centroids.iter().map(|c| c.count).sum()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(StamError::DimensionMismatch {
                expected: self.dim,
                actual: dim,
            });
        }
        Ok(())
    }

    /// Index and Euclidean distance of the centroid nearest to a raw slice.
    /// Ties go to the lowest index.
    pub(crate) fn nearest_to_slice(&self, target: &[f64]) -> Result<(usize, f64)> {
        self.check_dim(target.len())?;
        if self.centroids.is_empty() {
            return Err(StamError::EmptyUnit);
        }
        let mut best = 0usize;
        let mut best_dist = euclidean(self.centroids[0].center(), target);
        for (i, c) in self.centroids.iter().enumerate().skip(1) {
            let d = euclidean(c.center(), target);
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        Ok((best, best_dist))
    }

    /// Maps an exemplar to its nearest centroid. Pure read.
    pub fn nearest_centroid(&self, x: &Exemplar) -> Result<(usize, f64)> {
        self.nearest_to_slice(x.values())
    }

    /// True iff the distance exceeds the novelty threshold, or the unit has
    /// no centroids yet (the first exemplar always spawns).
    pub fn novelty_check(&self, distance: f64) -> bool {
        self.centroids.is_empty() || distance > self.config.theta_new
    }

    /// Folds `x` into the centroid at `index`: count increments, the center
    /// moves by `alpha = max(1/count', alpha_floor)` toward `x`, recency is
    /// stamped with the current step.
    pub fn update_centroid(&mut self, index: usize, x: &Exemplar) -> Result<()> {
        self.check_dim(x.dim())?;
        let len = self.centroids.len();
        let step = self.step;
        let c = self
            .centroids
            .get_mut(index)
            .ok_or(StamError::IndexOutOfRange { index, len })?;
        c.count += 1;
        let alpha = (1.0 / c.count as f64).max(self.config.alpha_floor);
        for (ci, xi) in c.center.iter_mut().zip(x.values()) {
            *ci += alpha * (xi - *ci);
        }
        c.last_used = step;
        Ok(())
    }

    /// Appends a new centroid at `x` (count 1, recency = current step),
    /// first evicting the least-recently-used centroid if the unit is full.
    /// Returns the count mass removed by eviction.
    pub fn spawn_cluster(&mut self, x: &Exemplar) -> Result<u64> {
        self.check_dim(x.dim())?;
        let mut evicted_mass = 0;
        if self.centroids.len() == self.config.capacity {
            let victim = self
                .centroids
                .iter()
                .enumerate()
                .min_by_key(|(_, c)| c.last_used)
                .map(|(i, _)| i)
                .expect("capacity >= 1");
            evicted_mass = self.centroids[victim].count;
            self.centroids.remove(victim);
        }
        self.centroids.push(CentroidRecord {
            center: x.values().to_vec(),
            count: 1,
            last_used: self.step,
        });
        Ok(evicted_mass)
    }

    /// Greedy closest-pair-first merging until no pair is closer than
    /// `theta_merge`. The merged centroid is the count-weighted mean, its
    /// count the sum and its recency the max of the pair. Count mass is
    /// conserved.
    pub fn merge_overlaps(&mut self) {
        self.merge_overlaps_tracked(None);
    }

    /// Merge while tracking one centroid index through the rewrites; returns
    /// where that centroid ended up.
    fn merge_overlaps_tracked(&mut self, mut tracked: Option<usize>) -> Option<usize> {
        loop {
            let n = self.centroids.len();
            if n < 2 {
                return tracked;
            }
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = euclidean(self.centroids[i].center(), self.centroids[j].center());
                    if best.is_none_or(|(_, _, bd)| d < bd) {
                        best = Some((i, j, d));
                    }
                }
            }
            let (i, j, d) = best.expect("n >= 2");
            if d >= self.config.theta_merge {
                return tracked;
            }
            let removed = self.centroids.remove(j);
            let kept = &mut self.centroids[i];
            let total = kept.count + removed.count;
            let wa = kept.count as f64 / total as f64;
            let wb = removed.count as f64 / total as f64;
            for (ci, ri) in kept.center.iter_mut().zip(removed.center.iter()) {
                *ci = wa * *ci + wb * *ri;
            }
            kept.count = total;
            kept.last_used = kept.last_used.max(removed.last_used);
            tracked = tracked.map(|t| {
                if t == i || t == j {
                    i
                } else if t > j {
                    t - 1
                } else {
                    t
                }
            });
        }
    }

    /// Absorbs one exemplar with a caller-chosen assignment, then merges,
    /// then advances the step counter. Returns the post-merge index of the
    /// centroid that holds the exemplar. This is the write path shared by
    /// [`StamUnit::observe`] and the hierarchy settle loop, which may revise
    /// the assignment before committing it.
    pub fn absorb(&mut self, x: &Exemplar, assignment: Assignment) -> Result<Absorption> {
        self.check_dim(x.dim())?;
        let (index, spawned, evicted_mass) = match assignment {
            Assignment::Spawn => {
                let evicted = self.spawn_cluster(x)?;
                (self.centroids.len() - 1, true, evicted)
            }
            Assignment::Existing(i) => {
                self.update_centroid(i, x)?;
                (i, false, 0)
            }
        };
        let index = self
            .merge_overlaps_tracked(Some(index))
            .expect("tracked index survives merging");
        self.step += 1;
        Ok(Absorption {
            index,
            spawned,
            evicted_mass,
        })
    }

    /// The canonical online step: nearest-centroid lookup, novelty check,
    /// spawn or incremental update, merge, step increment. Returns the index
    /// of the centroid that absorbed `x` in the post-merge list.
    pub fn observe(&mut self, x: &Exemplar) -> Result<usize> {
        self.check_dim(x.dim())?;
        let assignment = match self.nearest_to_slice(x.values()) {
            Ok((i, d)) => {
                if self.novelty_check(d) {
                    Assignment::Spawn
                } else {
                    Assignment::Existing(i)
                }
            }
            Err(StamError::EmptyUnit) => Assignment::Spawn,
            Err(e) => return Err(e),
        };
        Ok(self.absorb(x, assignment)?.index)
    }

    /// Associative-memory read: a copy of the nearest centroid's center.
    /// Never mutates.
    pub fn recall(&self, x: &Exemplar) -> Result<Vec<f64>> {
        let (i, _) = self.nearest_centroid(x)?;
        Ok(self.centroids[i].center.clone())
    }
}
