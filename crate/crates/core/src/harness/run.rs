use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::artifacts::{write_features, write_losses};
use super::checkpoint::{Checkpoint, RngSnapshot};
use super::config::{DatasetKind, ExperimentConfig, Method};
use crate::analysis::{feature_pruning_curve, identity_probe, ProbeReport, PruningCurve};
use crate::data::{generate_synthetic_split, load_csv, load_idx, save_csv, BatchIterator, Dataset, IdentityRegistry};
use crate::error::{AsifError, Result};
use crate::model::{
    evaluate_macro_f1, extract_features, per_sample_loss_map, train_epoch, AsifModel, LabelSource, StepConfig, Trainer,
};
use crate::noise::{detect_noisy, detection_metrics, DetectionScores, NoiseLedger};
use crate::rng::{streams, RngStream};
use crate::tensor::Sgd;

/// Metrics of one training epoch; one JSON line each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total objective over the epoch's steps, weighted by batch size.
    pub train_loss: f64,
    pub classification_loss: f64,
    /// Scored against the observed (possibly noisy) training labels.
    pub train_macro_f1: f64,
    pub test_macro_f1: f64,
    /// Mean identification loss per head over the steps it took part in.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub id_losses: BTreeMap<usize, f64>,
    /// Controller lambda of every head at the end of the epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunk_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub best_epoch: usize,
    pub best: DetectionScores,
    pub last: DetectionScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub method: Method,
    pub train_samples: usize,
    pub flipped: usize,
    pub epochs: Vec<EpochRecord>,
    pub final_train_loss: f64,
    pub final_train_macro_f1: f64,
    pub final_test_macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning: Option<PruningCurve>,
}

impl RunReport {
    /// One JSON object per epoch, newline terminated.
    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            writeln!(out, "{}", serde_json::to_string(e).expect("record serialises")).expect("string write");
        }
        out
    }
}

/// Everything a single run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub train: Dataset,
    pub ledger: NoiseLedger,
    /// Labels of the test set, in ledger form, for scoring test features.
    pub test_ledger: NoiseLedger,
    pub train_features: BTreeMap<usize, Vec<f64>>,
    pub test_features: BTreeMap<usize, Vec<f64>>,
    pub final_losses: BTreeMap<usize, f64>,
}

impl RunOutcome {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.jsonl"), self.report.metrics_jsonl())?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)?)?;
        self.checkpoint.save(&dir.join("checkpoint.bin"))?;
        self.ledger.write(dir.join("ledger.csv"))?;
        self.test_ledger.write(dir.join("test_ledger.csv"))?;
        write_features(&dir.join("features.csv"), &self.train_features)?;
        write_features(&dir.join("test_features.csv"), &self.test_features)?;
        write_losses(&dir.join("losses.csv"), &self.final_losses)?;
        save_csv(&self.train, dir.join("train.csv"))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seeds: Vec<u64>,
    pub test_macro_f1: Vec<f64>,
    pub test_macro_f1_summary: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_f1_best: Option<MeanStd>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_best_loss: Option<MeanStd>,
}

impl RunSummary {
    pub fn of(runs: &[RunOutcome]) -> Result<Self> {
        let f1: Vec<f64> = runs.iter().map(|r| r.report.final_test_macro_f1).collect();
        let det: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.report.detection.as_ref().map(|d| d.best.f1))
            .collect();
        let probe: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.report.probe.as_ref().map(|p| p.best_loss))
            .collect();
        Ok(Self {
            seeds: runs.iter().map(|r| r.report.seed).collect(),
            test_macro_f1_summary: MeanStd::of(&f1).ok_or_else(|| AsifError::Config {
                field: "repeats".into(),
                message: "no runs".into(),
            })?,
            test_macro_f1: f1,
            detection_f1_best: MeanStd::of(&det),
            probe_best_loss: MeanStd::of(&probe),
        })
    }
}

pub(crate) fn step_config(config: &ExperimentConfig) -> StepConfig {
    StepConfig {
        lambda_id: if config.method.uses_identifier() {
            config.lambda_id
        } else {
            0.0
        },
        loss: config.loss_kind(),
        dgr_sign: config.dgr_sign,
    }
}

/// Training and test sets named by the config, before subsampling.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match config.dataset {
        DatasetKind::Synthetic => generate_synthetic_split(&config.synthetic_spec(), config.syn_test_per_class),
        DatasetKind::Idx => Ok((
            load_idx(&config.train_images, &config.train_labels)?,
            load_idx(&config.test_images, &config.test_labels)?,
        )),
        DatasetKind::Csv => {
            let train = load_csv(&config.train_csv, config.csv_schema())?;
            let schema = crate::data::CsvSchema {
                num_classes: Some(train.num_classes()),
                ..config.csv_schema()
            };
            Ok((train, load_csv(&config.test_csv, schema)?))
        }
    }
}

/// Training set after subsampling and label-noise injection.
pub fn prepare_training_set(config: &ExperimentConfig, full: &Dataset) -> Result<(Dataset, NoiseLedger)> {
    let base = if config.n > 0 {
        let mut rng = RngStream::derive(config.seed, streams::SUBSAMPLE);
        full.subsample_balanced(config.n, &mut rng)?
    } else {
        full.clone()
    };
    config.noise_spec().apply(&base)
}

/// One complete run at `config.seed`.
pub fn run_single(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let seed = config.seed;
    let (full, test) = load_datasets(config)?;
    let (train, ledger) = prepare_training_set(config, &full)?;
    let registry = IdentityRegistry::build(&train);
    info!(
        "seed {seed}: {} training samples, {} flipped, method {:?}",
        train.len(),
        ledger.flipped_count(),
        config.method
    );

    let model_config = config.model_config(
        train.feature_dim(),
        train.num_classes(),
        Some(registry.counts().to_vec()),
    );
    let model = AsifModel::<f64>::new(model_config, seed)?;
    let optimizer = Sgd::new(config.lr, config.momentum)?;
    let fixed = (config.method == Method::AsifFixed).then_some(config.fixed_lambda);
    let mut trainer = Trainer::new(
        model,
        optimizer,
        step_config(config),
        fixed,
        RngStream::derive(seed, streams::DROPOUT),
    )?;
    let mut batches = BatchIterator::new(
        train.len(),
        config.batch_size,
        RngStream::derive(seed, streams::SHUFFLE),
    )?;
    let mut jitter = RngStream::derive(seed, streams::NOISE + 100);
    let kind = config.loss_kind();

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut detection: Option<DetectionSummary> = None;
    let mut final_losses = BTreeMap::new();
    for epoch in 1..=config.epochs {
        let steps = train_epoch(&mut trainer, &train, &registry, &mut batches, &mut jitter)?;
        let rows: Vec<f64> = batches_sizes(train.len(), config.batch_size);
        let total_rows: f64 = rows.iter().sum();
        let train_loss = steps.iter().zip(&rows).map(|(s, b)| s.total_loss * b).sum::<f64>() / total_rows;
        let cls_loss = steps
            .iter()
            .zip(&rows)
            .map(|(s, b)| s.classification_loss * b)
            .sum::<f64>()
            / total_rows;
        let mut id_sum: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        let mut trunk = Vec::new();
        for s in &steps {
            for (&c, &l) in &s.per_class_id_losses {
                let e = id_sum.entry(c).or_default();
                e.0 += l;
                e.1 += 1;
            }
            trunk.extend(s.trunk_lambda);
        }
        let uses_id = config.method.uses_identifier();
        let losses = per_sample_loss_map(&mut trainer.model, &train, kind, LabelSource::Observed)?;
        let scores = if config.detect {
            let flagged = detect_noisy(&losses, config.eta)?;
            let s = detection_metrics(&flagged, &ledger)?;
            match &mut detection {
                Some(d) => {
                    if s.f1 > d.best.f1 {
                        d.best = s;
                        d.best_epoch = epoch;
                    }
                    d.last = s;
                }
                None => {
                    detection = Some(DetectionSummary {
                        best_epoch: epoch,
                        best: s,
                        last: s,
                    })
                }
            }
            Some(s)
        } else {
            None
        };
        final_losses = losses;
        let record = EpochRecord {
            epoch,
            train_loss,
            classification_loss: cls_loss,
            train_macro_f1: evaluate_macro_f1(&mut trainer.model, &train, LabelSource::Observed)?,
            test_macro_f1: evaluate_macro_f1(&mut trainer.model, &test, LabelSource::True)?,
            id_losses: id_sum.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect(),
            lambdas: uses_id.then(|| trainer.dgr.iter().enumerate().map(|(c, d)| (c, d.lambda)).collect()),
            trunk_lambda: (uses_id && !trunk.is_empty()).then(|| trunk.iter().sum::<f64>() / trunk.len() as f64),
            detection: scores,
        };
        check_finite(&record)?;
        info!(
            "seed {seed} epoch {epoch}: loss {:.4} train F1 {:.4} test F1 {:.4}",
            record.train_loss, record.train_macro_f1, record.test_macro_f1
        );
        epochs.push(record);
    }

    let train_features = extract_features(&mut trainer.model, &train)?;
    let test_features = extract_features(&mut trainer.model, &test)?;
    let probe = if config.probe {
        Some(identity_probe(&train_features, &config.probe_config())?)
    } else {
        None
    };
    let pruning = if config.prune {
        let x: Vec<Vec<f64>> = train_features.values().cloned().collect();
        let ex: Vec<Vec<f64>> = test_features.values().cloned().collect();
        Some(feature_pruning_curve(
            &x,
            &train.observed_labels(),
            train.num_classes(),
            Some((&ex, &test.true_labels())),
            &config.prune_config(),
        )?)
    } else {
        None
    };
    let last = epochs.last().expect("epochs > 0");
    let report = RunReport {
        seed,
        method: config.method,
        train_samples: train.len(),
        flipped: ledger.flipped_count(),
        final_train_loss: last.train_loss,
        final_train_macro_f1: last.train_macro_f1,
        final_test_macro_f1: last.test_macro_f1,
        epochs,
        detection,
        probe,
        pruning,
    };
    let rngs = BTreeMap::from([
        ("shuffle".to_string(), RngSnapshot::of(batches.rng())),
        ("jitter".to_string(), RngSnapshot::of(&jitter)),
    ]);
    let checkpoint = Checkpoint::capture(config, &trainer, config.epochs, rngs);
    Ok(RunOutcome {
        report,
        checkpoint,
        train,
        ledger,
        test_ledger: NoiseLedger::of_dataset(&test),
        train_features,
        test_features,
        final_losses,
    })
}

fn batches_sizes(n: usize, b: usize) -> Vec<f64> {
    (0..n.div_ceil(b)).map(|i| (n - i * b).min(b) as f64).collect()
}

fn check_finite(r: &EpochRecord) -> Result<()> {
    let mut values = vec![r.train_loss, r.classification_loss, r.train_macro_f1, r.test_macro_f1];
    values.extend(r.id_losses.values());
    values.extend(r.lambdas.iter().flat_map(|m| m.values().copied()));
    values.extend(r.trunk_lambda);
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AsifError::NonFinite {
            context: format!("epoch {} metrics", r.epoch),
        })
    }
}

/// Seeds used by the repeats of `config`.
pub fn repeat_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.repeats as u64)
        .map(|r| config.seed.wrapping_add(r))
        .collect()
}

/// Runs every repeat concurrently, each as an isolated session at
/// `seed + repeat`, and writes outputs under `out` when given: directly for a
/// single repeat, otherwise in `repeat_<r>` subdirectories plus
/// `summary.json`.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<(Vec<RunOutcome>, RunSummary)> {
    config.validate()?;
    let configs: Vec<ExperimentConfig> = repeat_seeds(config)
        .into_iter()
        .map(|seed| ExperimentConfig {
            seed,
            repeats: 1,
            ..config.clone()
        })
        .collect();
    let runs: Vec<RunOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs.iter().map(|c| scope.spawn(move || run_single(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("repeat thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = RunSummary::of(&runs)?;
    if let Some(dir) = out {
        if runs.len() == 1 {
            runs[0].write(dir)?;
        } else {
            for (r, run) in runs.iter().enumerate() {
                run.write(&dir.join(format!("repeat_{r}")))?;
            }
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok((runs, summary))
}
