//! Datasets with stable sample identities.

mod batches;
mod csv;
mod idx;
mod registry;
mod synthetic;

pub use batches::{Batch, BatchIterator};
pub use csv::{load_csv, save_csv, CsvSchema};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use registry::IdentityRegistry;
pub use synthetic::{generate_synthetic, generate_synthetic_split, SyntheticSpec};

use std::collections::{BTreeMap, HashSet};

use crate::error::{invalid, AsifError, Result};
use crate::rng::RngStream;

/// One training instance. `id` never changes once assigned; label noise
/// only ever rewrites `observed_label`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub true_label: usize,
    pub observed_label: usize,
}

/// An immutable collection of samples over `num_classes` classes.
///
/// `jitter_std > 0` adds fresh Gaussian noise to every feature each time a
/// sample is served in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_dim: usize,
    jitter_std: f64,
    position: BTreeMap<usize, usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(invalid("num_classes", "must be >= 1"));
        }
        let feature_dim = samples.first().map_or(0, |s| s.features.len());
        let mut seen = HashSet::with_capacity(samples.len());
        let mut position = BTreeMap::new();
        for (pos, s) in samples.iter().enumerate() {
            if !seen.insert(s.id) {
                return Err(invalid("samples", format!("duplicate sample id {}", s.id)));
            }
            position.insert(s.id, pos);
            if s.features.len() != feature_dim {
                return Err(invalid(
                    "samples",
                    format!(
                        "sample {} has {} features, expected {feature_dim}",
                        s.id,
                        s.features.len()
                    ),
                ));
            }
            for (what, l) in [("true label", s.true_label), ("observed label", s.observed_label)] {
                if l >= num_classes {
                    return Err(AsifError::IndexOutOfRange {
                        what,
                        index: l,
                        limit: num_classes,
                    });
                }
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(AsifError::NonFinite {
                    context: format!("features of sample {}", s.id),
                });
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
            jitter_std: 0.0,
            position,
        })
    }

    /// Builds a clean dataset (observed == true) with ids `0..n` in order.
    pub fn from_labelled(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(invalid(
                "labels",
                format!("{} rows vs {} labels", features.len(), labels.len()),
            ));
        }
        let samples = features
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(id, (features, l))| Sample {
                id,
                features,
                true_label: l,
                observed_label: l,
            })
            .collect();
        Self::new(samples, num_classes)
    }

    pub fn with_jitter(mut self, std: f64) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(invalid("jitter_std", format!("{std}")));
        }
        self.jitter_std = std;
        Ok(self)
    }

    pub fn jitter_std(&self) -> f64 {
        self.jitter_std
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn by_id(&self, id: usize) -> Option<&Sample> {
        self.position.get(&id).map(|&p| &self.samples[p])
    }

    pub fn true_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.observed_label).collect()
    }

    /// Copy with observed labels replaced for the listed ids.
    pub fn relabel(&self, observed: &BTreeMap<usize, usize>) -> Result<Self> {
        let mut samples = self.samples.clone();
        for s in &mut samples {
            if let Some(&l) = observed.get(&s.id) {
                s.observed_label = l;
            }
        }
        if let Some(id) = observed.keys().find(|id| !self.position.contains_key(id)) {
            return Err(invalid("observed", format!("unknown sample id {id}")));
        }
        Self::new(samples, self.num_classes)?.with_jitter(self.jitter_std)
    }

    /// Class-balanced seeded subset with `n / C` samples of every (true)
    /// class; `n == 0` or `n >= len` returns the full set. Sample order and
    /// ids are preserved.
    pub fn subsample_balanced(&self, n: usize, rng: &mut RngStream) -> Result<Self> {
        if n == 0 || n >= self.len() {
            return Ok(self.clone());
        }
        if !n.is_multiple_of(self.num_classes) {
            return Err(invalid(
                "n",
                format!("{n} is not divisible by {} classes", self.num_classes),
            ));
        }
        let per_class = n / self.num_classes;
        let mut keep = vec![false; self.len()];
        for c in 0..self.num_classes {
            let members: Vec<usize> = (0..self.len()).filter(|&p| self.samples[p].true_label == c).collect();
            if members.len() < per_class {
                return Err(invalid(
                    "n",
                    format!("class {c} has {} samples, {per_class} requested", members.len()),
                ));
            }
            for k in rng.sample_distinct(members.len(), per_class) {
                keep[members[k]] = true;
            }
        }
        let samples = self
            .samples
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        Self::new(samples, self.num_classes)?.with_jitter(self.jitter_std)
    }

    /// Un-jittered inputs at dataset positions `positions` as `[n, D]`.
    pub fn inputs<T: crate::scalar::Scalar>(&self, positions: &[usize]) -> Result<crate::tensor::Tensor<T>> {
        let mut data = Vec::with_capacity(positions.len() * self.feature_dim);
        for &p in positions {
            let s = self
                .samples
                .get(p)
                .ok_or_else(|| invalid("positions", format!("{p} out of range")))?;
            data.extend(s.features.iter().map(|&v| T::lit(v)));
        }
        crate::tensor::Tensor::new(vec![positions.len(), self.feature_dim], data)
    }

    /// Copy whose observed labels are reset to the true labels.
    pub fn clean(&self) -> Self {
        let mut d = self.clone();
        for s in &mut d.samples {
            s.observed_label = s.true_label;
        }
        d
    }

    /// Count of samples per observed class.
    pub fn observed_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.observed_label] += 1;
        }
        counts
    }
}
