//! Gaussian classification data with planted class-wise and identity-wise
//! signal.
//!
//! Feature layout: `[class dims | identity dims | noise dims]`. Class dims
//! hold the class mean; identity dims hold a per-sample signature that is
//! fixed for the life of the sample; noise dims are zero. Training sets carry
//! `noise_std` as per-serve jitter, so the signature is the only thing that
//! singles a training sample out. Test samples get fresh signatures and one
//! frozen noise draw.

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{invalid, Result};
use crate::rng::{streams, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub class_dims: usize,
    /// Pairwise distance between class means, in units of `noise_std`.
    pub separation: f64,
    pub identity_dims: usize,
    /// Standard deviation of each signature coordinate.
    pub identity_strength: f64,
    pub noise_dims: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            samples_per_class: 50,
            class_dims: 8,
            separation: 3.0,
            identity_dims: 48,
            identity_strength: 1.0,
            noise_dims: 8,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 1 || self.samples_per_class < 1 || self.class_dims < 1 {
            return Err(invalid(
                "synthetic",
                "classes, samples per class and class dims must be positive",
            ));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("identity_strength", self.identity_strength),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("synthetic", format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.class_dims + self.identity_dims + self.noise_dims
    }

    /// Class means in the class-dim block. With at least as many dims as
    /// classes the means sit on scaled orthonormal directions, giving exact
    /// pairwise distance `separation * noise_std`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = RngStream::derive(self.seed, streams::DATA + 100);
        let d = self.class_dims;
        let scale = self.separation * self.noise_std / std::f64::consts::SQRT_2;
        if d >= self.classes {
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.classes);
            while basis.len() < self.classes {
                let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                for b in &basis {
                    let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= dot * y;
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    basis.push(v.into_iter().map(|x| x / norm).collect());
                }
            }
            basis
                .into_iter()
                .map(|b| b.into_iter().map(|x| x * scale).collect())
                .collect()
        } else {
            (0..self.classes)
                .map(|_| (0..d).map(|_| rng.normal() * scale).collect())
                .collect()
        }
    }

    fn draw(&self, per_class: usize, stream: u64, frozen_noise: bool, first_id: usize) -> Result<Dataset> {
        self.validate()?;
        let means = self.class_means();
        let mut rng = RngStream::derive(self.seed, stream);
        let mut samples = Vec::with_capacity(self.classes * per_class);
        let mut id = first_id;
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let mut f = Vec::with_capacity(self.feature_dim());
                f.extend(mean.iter().copied());
                f.extend((0..self.identity_dims).map(|_| self.identity_strength * rng.normal()));
                f.extend(std::iter::repeat_n(0.0, self.noise_dims));
                if frozen_noise {
                    for v in &mut f {
                        *v += self.noise_std * rng.normal();
                    }
                }
                samples.push(Sample {
                    id,
                    features: f,
                    true_label: c,
                    observed_label: c,
                });
                id += 1;
            }
        }
        Dataset::new(samples, self.classes)
    }
}

/// Training split: ids `0..C*samples_per_class`, class-major, with per-serve
/// jitter of `noise_std`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.draw(spec.samples_per_class, streams::DATA, false, 0)?
        .with_jitter(spec.noise_std)
}

/// Training split plus an independent test split sharing the class means.
pub fn generate_synthetic_split(spec: &SyntheticSpec, test_per_class: usize) -> Result<(Dataset, Dataset)> {
    let train = generate_synthetic(spec)?;
    let test = spec.draw(test_per_class, streams::DATA + 1, true, 0)?;
    Ok((train, test))
}
