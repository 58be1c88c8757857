use std::collections::BTreeMap;

use super::network::AsifModel;
use super::train::{StepReport, Trainer};
use crate::data::{Batch, BatchIterator, Dataset, IdentityRegistry};
use crate::error::Result;
use crate::losses::{macro_f1, per_sample_losses, ConfusionMatrix, LossKind};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 512;

/// Which label of each sample an evaluation scores against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    True,
    Observed,
}

fn labels(dataset: &Dataset, src: LabelSource) -> Vec<usize> {
    match src {
        LabelSource::True => dataset.true_labels(),
        LabelSource::Observed => dataset.observed_labels(),
    }
}

/// Eval-mode features and logits of every sample, in dataset order.
pub fn infer_dataset<T: Scalar>(model: &mut AsifModel<T>, dataset: &Dataset) -> Result<(Vec<Vec<T>>, Tensor<T>)> {
    let mut feats = Vec::with_capacity(dataset.len());
    let mut logits = Vec::with_capacity(dataset.len() * model.num_classes());
    let positions: Vec<usize> = (0..dataset.len()).collect();
    for chunk in positions.chunks(EVAL_CHUNK) {
        let (f, l) = model.infer(&dataset.inputs(chunk)?)?;
        let fd = f.shape()[1];
        feats.extend(f.data().chunks(fd).map(<[T]>::to_vec));
        logits.extend_from_slice(l.data());
    }
    let logits = Tensor::new(vec![dataset.len(), model.num_classes()], logits)?;
    Ok((feats, logits))
}

/// Frozen extractor output keyed by sample id.
pub fn extract_features<T: Scalar>(model: &mut AsifModel<T>, dataset: &Dataset) -> Result<BTreeMap<usize, Vec<f64>>> {
    let (feats, _) = infer_dataset(model, dataset)?;
    Ok(dataset
        .ids()
        .into_iter()
        .zip(feats)
        .map(|(id, f)| (id, f.into_iter().map(Scalar::as_f64).collect()))
        .collect())
}

pub fn evaluate_macro_f1<T: Scalar>(model: &mut AsifModel<T>, dataset: &Dataset, src: LabelSource) -> Result<f64> {
    let (_, logits) = infer_dataset(model, dataset)?;
    let cm = ConfusionMatrix::from_predictions(&labels(dataset, src), &logits.argmax_rows()?, model.num_classes())?;
    macro_f1(&cm)
}

/// Eval-mode per-sample classification loss keyed by sample id.
pub fn per_sample_loss_map<T: Scalar>(
    model: &mut AsifModel<T>,
    dataset: &Dataset,
    kind: LossKind,
    src: LabelSource,
) -> Result<BTreeMap<usize, f64>> {
    let (_, logits) = infer_dataset(model, dataset)?;
    let losses = per_sample_losses(&logits, &labels(dataset, src), kind)?;
    Ok(dataset
        .ids()
        .into_iter()
        .zip(losses.into_iter().map(Scalar::as_f64))
        .collect())
}

/// Runs one epoch of steps over shuffled batches, returning every step's
/// report in order.
pub fn train_epoch<T: Scalar>(
    trainer: &mut Trainer<T>,
    dataset: &Dataset,
    registry: &IdentityRegistry,
    batches: &mut BatchIterator,
    jitter: &mut RngStream,
) -> Result<Vec<StepReport>> {
    batches
        .next_epoch()
        .iter()
        .map(|positions| {
            let batch = Batch::gather(dataset, registry, positions, Some(jitter))?;
            trainer.train_step(&batch)
        })
        .collect()
}
