use super::{Dataset, IdentityRegistry};
use crate::error::{invalid, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A mini-batch, row-aligned across every field.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub ids: Vec<usize>,
    pub inputs: Tensor<T>,
    pub observed: Vec<usize>,
    pub true_labels: Vec<usize>,
    /// Within-observed-class identity index of each row.
    pub identity: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Gathers the samples at dataset positions `positions`. With a jitter
    /// stream, the dataset's per-serve noise is added.
    pub fn gather(
        dataset: &Dataset,
        registry: &IdentityRegistry,
        positions: &[usize],
        jitter: Option<&mut RngStream>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("positions", "empty batch"));
        }
        let d = dataset.feature_dim();
        let mut data = Vec::with_capacity(positions.len() * d);
        let mut ids = Vec::with_capacity(positions.len());
        let mut observed = Vec::with_capacity(positions.len());
        let mut true_labels = Vec::with_capacity(positions.len());
        let mut identity = Vec::with_capacity(positions.len());
        let std = dataset.jitter_std();
        let mut jitter = jitter.filter(|_| std > 0.0);
        for &p in positions {
            let s = dataset
                .samples()
                .get(p)
                .ok_or_else(|| invalid("positions", format!("{p} out of range")))?;
            match jitter.as_deref_mut() {
                Some(rng) => data.extend(s.features.iter().map(|&v| T::lit(v + std * rng.normal()))),
                None => data.extend(s.features.iter().map(|&v| T::lit(v))),
            }
            let (c, idx) = registry.lookup(s.id)?;
            debug_assert_eq!(c, s.observed_label);
            ids.push(s.id);
            observed.push(s.observed_label);
            true_labels.push(s.true_label);
            identity.push(idx);
        }
        Ok(Self {
            ids,
            inputs: Tensor::new(vec![positions.len(), d], data)?,
            observed,
            true_labels,
            identity,
        })
    }
}

/// Seeded epoch shuffler yielding dataset positions; the final short batch
/// is kept.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    rng: RngStream,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, rng: RngStream) -> Result<Self> {
        if batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if len == 0 {
            return Err(invalid("dataset", "empty"));
        }
        Ok(Self { len, batch_size, rng })
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        self.rng.shuffle(&mut order);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}
