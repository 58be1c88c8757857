use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ledger::NoiseLedger;
use crate::data::{BatchIterator, Dataset, IdentityRegistry};
use crate::error::{invalid, Result};
use crate::losses::LossKind;
use crate::model::{
    per_sample_loss_map, train_epoch, AsifModel, DgrSign, LabelSource, ModelConfig, StepConfig, Trainer,
};
use crate::rng::{streams, RngStream};
use crate::tensor::Sgd;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    Symmetric,
    InstanceDependent,
}

/// Plain cross-entropy training used to rank samples by difficulty before
/// instance-dependent flipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub extractor_widths: Vec<usize>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 128,
            extractor_widths: vec![128, 64],
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub eta: f64,
    pub seed: u64,
    pub warmup: WarmupConfig,
}

impl NoiseSpec {
    pub fn apply(&self, dataset: &Dataset) -> Result<(Dataset, NoiseLedger)> {
        match self.kind {
            NoiseKind::None => Ok((dataset.clone(), NoiseLedger::of_dataset(dataset))),
            NoiseKind::Symmetric => {
                let mut rng = RngStream::derive(self.seed, streams::NOISE);
                inject_symmetric_dataset(dataset, self.eta, &mut rng)
            }
            NoiseKind::InstanceDependent => inject_instance_dependent(dataset, self.eta, &self.warmup, self.seed),
        }
    }
}

/// Number of labels flipped at rate `eta`: `round(n * eta)`, halves up.
pub fn flip_count(n: usize, eta: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid("eta", format!("{eta} outside [0,1]")));
    }
    Ok(((n as f64) * eta + 0.5).floor() as usize)
}

fn check_flippable(classes: usize, eta: f64) -> Result<()> {
    if classes < 2 && eta > 0.0 {
        return Err(invalid("eta", "label noise needs at least two classes"));
    }
    Ok(())
}

/// Flips `round(N*eta)` distinct samples, each to a class drawn uniformly
/// from the other `C - 1`. Returns the new label of every sample, in input
/// order.
pub fn inject_symmetric(labels: &[usize], eta: f64, classes: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    check_flippable(classes, eta)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid("labels", format!("label {bad} with {classes} classes")));
    }
    let k = flip_count(labels.len(), eta)?;
    let mut out = labels.to_vec();
    for pos in rng.sample_distinct(labels.len(), k) {
        let r = rng.below(classes - 1);
        out[pos] = if r >= labels[pos] { r + 1 } else { r };
    }
    Ok(out)
}

/// Symmetric noise over a dataset's true labels.
pub fn inject_symmetric_dataset(dataset: &Dataset, eta: f64, rng: &mut RngStream) -> Result<(Dataset, NoiseLedger)> {
    let noisy = inject_symmetric(&dataset.true_labels(), eta, dataset.num_classes(), rng)?;
    relabelled(dataset, noisy)
}

fn relabelled(dataset: &Dataset, labels: Vec<usize>) -> Result<(Dataset, NoiseLedger)> {
    let map: BTreeMap<usize, usize> = dataset.ids().into_iter().zip(labels).collect();
    let noisy = dataset.relabel(&map)?;
    let ledger = NoiseLedger::of_dataset(&noisy);
    Ok((noisy, ledger))
}

/// Sample ids ordered from hardest to easiest.
///
/// A fresh plain classifier is trained on the clean labels; after every
/// epoch each sample's eval-mode cross-entropy is recorded, and samples are
/// ranked by the mean over epochs, descending, ties by ascending id.
pub fn rank_samples_by_loss(dataset: &Dataset, warmup: &WarmupConfig, seed: u64) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(invalid("dataset", "empty"));
    }
    if warmup.epochs == 0 {
        return Err(invalid("warmup.epochs", "must be positive"));
    }
    let clean = dataset.clean();
    let config = ModelConfig {
        input_dim: clean.feature_dim(),
        extractor_widths: warmup.extractor_widths.clone(),
        num_classes: clean.num_classes(),
        identity_counts: None,
        id_hidden1: 1,
        id_hidden2: 1,
        dropout: 0.0,
        bn_eps: warmup.bn_eps,
        bn_momentum: warmup.bn_momentum,
    };
    let warm_seed = seed ^ 0x5741_524d;
    let model = AsifModel::<f64>::new(config, warm_seed)?;
    let step = StepConfig {
        lambda_id: 0.0,
        loss: LossKind::Ce,
        dgr_sign: DgrSign::Suppression,
    };
    let sgd = Sgd::new(warmup.lr, warmup.momentum)?;
    let mut trainer = Trainer::new(model, sgd, step, None, RngStream::derive(warm_seed, streams::DROPOUT))?;
    let registry = IdentityRegistry::build(&clean);
    let mut batches = BatchIterator::new(
        clean.len(),
        warmup.batch_size,
        RngStream::derive(warm_seed, streams::WARMUP),
    )?;
    let mut jitter = RngStream::derive(warm_seed, streams::DATA);

    let mut total: BTreeMap<usize, f64> = BTreeMap::new();
    for _ in 0..warmup.epochs {
        train_epoch(&mut trainer, &clean, &registry, &mut batches, &mut jitter)?;
        for (id, l) in per_sample_loss_map(&mut trainer.model, &clean, LossKind::Ce, LabelSource::True)? {
            *total.entry(id).or_default() += l;
        }
    }
    let mut ranked: Vec<(usize, f64)> = total.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().map(|(id, _)| id).collect())
}

/// Flips the `round(N*eta)` hardest samples, each to a uniformly chosen
/// other class.
pub fn inject_instance_dependent(
    dataset: &Dataset,
    eta: f64,
    warmup: &WarmupConfig,
    seed: u64,
) -> Result<(Dataset, NoiseLedger)> {
    check_flippable(dataset.num_classes(), eta)?;
    let k = flip_count(dataset.len(), eta)?;
    let mut labels: BTreeMap<usize, usize> = dataset.samples().iter().map(|s| (s.id, s.true_label)).collect();
    if k > 0 {
        let ranked = rank_samples_by_loss(dataset, warmup, seed)?;
        let mut rng = RngStream::derive(seed, streams::NOISE);
        let classes = dataset.num_classes();
        for id in ranked.into_iter().take(k) {
            let truth = labels[&id];
            let r = rng.below(classes - 1);
            labels.insert(id, if r >= truth { r + 1 } else { r });
        }
    }
    let ordered = dataset.ids().into_iter().map(|id| labels[&id]).collect();
    relabelled(dataset, ordered)
}
