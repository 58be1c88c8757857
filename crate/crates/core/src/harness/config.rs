//! Experiment configuration as a flat `key = value` document.
//!
//! Blank lines and lines starting with `#` are ignored. Keys not present
//! keep their defaults; unknown keys are errors. Lists are comma separated.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::analysis::{LinearFitConfig, ProbeConfig, PruneConfig, PruneSchedule};
use crate::data::{CsvSchema, SyntheticSpec};
use crate::error::{AsifError, Result};
use crate::losses::LossKind;
use crate::model::{DgrSign, ModelConfig};
use crate::noise::{NoiseKind, NoiseSpec, WarmupConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Idx,
    Csv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ce,
    Gce,
    Phuber,
    #[default]
    Asif,
    AsifFixed,
}

impl Method {
    pub fn uses_identifier(self) -> bool {
        matches!(self, Self::Asif | Self::AsifFixed)
    }
}

/// One experiment. Every field maps to one key of the same name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub train_csv: String,
    pub test_csv: String,
    pub csv_header: bool,
    /// Number of classes of a CSV dataset; 0 infers it from the labels.
    pub csv_classes: usize,

    pub syn_classes: usize,
    pub syn_per_class: usize,
    pub syn_test_per_class: usize,
    pub syn_class_dims: usize,
    pub syn_separation: f64,
    pub syn_identity_dims: usize,
    pub syn_identity_strength: f64,
    pub syn_noise_dims: usize,
    pub syn_noise_std: f64,

    /// Class-balanced training subset size; 0 keeps every sample.
    pub n: usize,
    pub noise: NoiseKind,
    pub eta: f64,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,

    pub method: Method,
    pub lr: f64,
    pub momentum: f64,
    pub lambda_id: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub repeats: usize,

    pub extractor_widths: Vec<usize>,
    pub id_hidden1: usize,
    pub id_hidden2: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub dgr_sign: DgrSign,
    pub fixed_lambda: f64,
    pub gce_q: f64,
    pub phuber_tau: f64,

    pub detect: bool,
    pub probe: bool,
    pub prune: bool,
    pub probe_lr: f64,
    pub probe_patience: usize,
    pub probe_max_epochs: usize,
    pub prune_fraction: f64,
    pub prune_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let syn = SyntheticSpec::default();
        let warm = WarmupConfig::default();
        let probe = LinearFitConfig::default();
        Self {
            dataset: DatasetKind::Synthetic,
            train_images: String::new(),
            train_labels: String::new(),
            test_images: String::new(),
            test_labels: String::new(),
            train_csv: String::new(),
            test_csv: String::new(),
            csv_header: true,
            csv_classes: 0,
            syn_classes: syn.classes,
            syn_per_class: syn.samples_per_class,
            syn_test_per_class: 100,
            syn_class_dims: syn.class_dims,
            syn_separation: syn.separation,
            syn_identity_dims: syn.identity_dims,
            syn_identity_strength: syn.identity_strength,
            syn_noise_dims: syn.noise_dims,
            syn_noise_std: syn.noise_std,
            n: 0,
            noise: NoiseKind::None,
            eta: 0.0,
            warmup_epochs: warm.epochs,
            warmup_lr: warm.lr,
            method: Method::Asif,
            lr: 0.01,
            momentum: 0.9,
            lambda_id: 1.0,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            repeats: 1,
            extractor_widths: vec![128, 64],
            id_hidden1: 128,
            id_hidden2: 128,
            dropout: 0.5,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            dgr_sign: DgrSign::Suppression,
            fixed_lambda: 1.0,
            gce_q: LossKind::DEFAULT_GCE_Q,
            phuber_tau: LossKind::DEFAULT_PHUBER_TAU,
            detect: false,
            probe: false,
            prune: false,
            probe_lr: probe.lr,
            probe_patience: probe.patience,
            probe_max_epochs: probe.max_epochs,
            prune_fraction: 0.1,
            prune_epochs: 100,
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> AsifError {
    AsifError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:?}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn parse_like(template: &Value, raw: &str, field: &str) -> Result<Value> {
    let raw = raw.trim();
    match template {
        Value::Bool(_) => match raw {
            "true" | "yes" | "1" => Ok(Value::Bool(true)),
            "false" | "no" | "0" => Ok(Value::Bool(false)),
            _ => Err(field_err(field, format!("expected true/false, got `{raw}`"))),
        },
        Value::Number(n) if n.is_f64() => {
            let f: f64 = raw
                .parse()
                .map_err(|_| field_err(field, format!("expected a number, got `{raw}`")))?;
            Number::from_f64(f)
                .map(Value::Number)
                .ok_or_else(|| field_err(field, format!("`{raw}` is not finite")))
        }
        Value::Number(_) => raw
            .parse::<u64>()
            .map(|u| Value::Number(u.into()))
            .map_err(|_| field_err(field, format!("expected a non-negative integer, got `{raw}`"))),
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::Number(0u64.into()));
            raw.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_like(&elem, s, field))
                .collect::<Result<Vec<_>>>()
                .map(Value::Array)
        }
        _ => Ok(Value::String(raw.to_string())),
    }
}

impl ExperimentConfig {
    pub fn to_text(&self) -> String {
        let Value::Object(map) = serde_json::to_value(self).expect("config serialises") else {
            unreachable!("config is a struct");
        };
        let mut out = String::new();
        for (k, v) in &map {
            writeln!(out, "{k} = {}", render(v)).expect("string write");
        }
        out
    }

    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self> {
        let Value::Object(mut map) = serde_json::to_value(Self::default()).expect("config serialises") else {
            unreachable!("config is a struct");
        };
        let template: Map<String, Value> = map.clone();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                field_err(
                    &format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            let key = key.trim();
            let t = template.get(key).ok_or_else(|| field_err(key, "unknown key"))?;
            map.insert(key.to_string(), parse_like(t, value, key)?);
        }
        let config: Self = serde_json::from_value(Value::Object(map.clone())).map_err(|e| {
            let bad = map
                .iter()
                .find(|(k, v)| serde_json::from_value::<Self>(Value::Object(replace(&template, k, v))).is_err())
                .map(|(k, _)| k.clone())
                .unwrap_or_else(|| "config".into());
            field_err(&bad, e.to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("repeats", self.repeats),
            ("id_hidden1", self.id_hidden1),
            ("id_hidden2", self.id_hidden2),
            ("probe_max_epochs", self.probe_max_epochs),
            ("prune_epochs", self.prune_epochs),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(field_err(field, "must be positive"));
            }
        }
        if self.noise == NoiseKind::InstanceDependent && self.warmup_epochs == 0 {
            return Err(field_err(
                "warmup_epochs",
                "must be positive for instance-dependent noise",
            ));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(field_err("eta", format!("{} outside [0,1]", self.eta)));
        }
        if self.noise == NoiseKind::None && self.eta != 0.0 {
            return Err(field_err("eta", "must be 0 when noise = none"));
        }
        for (field, v) in [
            ("lr", self.lr),
            ("warmup_lr", self.warmup_lr),
            ("probe_lr", self.probe_lr),
            ("bn_eps", self.bn_eps),
        ] {
            if !(v > 0.0) {
                return Err(field_err(field, format!("{v} must be > 0")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(field_err("momentum", format!("{} outside [0,1)", self.momentum)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(field_err("bn_momentum", format!("{} outside (0,1]", self.bn_momentum)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(field_err("dropout", format!("{} outside [0,1)", self.dropout)));
        }
        if !(self.lambda_id >= 0.0) {
            return Err(field_err("lambda_id", format!("{} must be >= 0", self.lambda_id)));
        }
        if self.extractor_widths.is_empty() || self.extractor_widths.contains(&0) {
            return Err(field_err("extractor_widths", "need at least one positive width"));
        }
        if self.prune && self.feature_dim() < crate::analysis::FINAL_PRUNED_DIMS {
            return Err(field_err(
                "extractor_widths",
                "pruning needs a feature width of at least 5",
            ));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction < 1.0) {
            return Err(field_err(
                "prune_fraction",
                format!("{} outside (0,1)", self.prune_fraction),
            ));
        }
        self.loss_kind().validate().map_err(|e| {
            field_err(
                if self.method == Method::Gce {
                    "gce_q"
                } else {
                    "phuber_tau"
                },
                e.to_string(),
            )
        })?;
        match self.dataset {
            DatasetKind::Synthetic => {
                self.synthetic_spec()
                    .validate()
                    .map_err(|e| field_err("syn_*", e.to_string()))?;
                if self.syn_test_per_class == 0 {
                    return Err(field_err("syn_test_per_class", "must be positive"));
                }
            }
            DatasetKind::Idx => {
                for (field, v) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if v.is_empty() {
                        return Err(field_err(field, "required for dataset = idx"));
                    }
                }
            }
            DatasetKind::Csv => {
                for (field, v) in [("train_csv", &self.train_csv), ("test_csv", &self.test_csv)] {
                    if v.is_empty() {
                        return Err(field_err(field, "required for dataset = csv"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor_widths.last().copied().unwrap_or(0)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.syn_classes,
            samples_per_class: self.syn_per_class,
            class_dims: self.syn_class_dims,
            separation: self.syn_separation,
            identity_dims: self.syn_identity_dims,
            identity_strength: self.syn_identity_strength,
            noise_dims: self.syn_noise_dims,
            noise_std: self.syn_noise_std,
            seed: self.seed,
        }
    }

    pub fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            has_header: self.csv_header,
            num_classes: (self.csv_classes > 0).then_some(self.csv_classes),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.method {
            Method::Gce => LossKind::Gce { q: self.gce_q },
            Method::Phuber => LossKind::Phuber { tau: self.phuber_tau },
            _ => LossKind::Ce,
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: self.noise,
            eta: self.eta,
            seed: self.seed,
            warmup: WarmupConfig {
                epochs: self.warmup_epochs,
                lr: self.warmup_lr,
                momentum: self.momentum,
                batch_size: self.batch_size,
                extractor_widths: self.extractor_widths.clone(),
                bn_eps: self.bn_eps,
                bn_momentum: self.bn_momentum,
            },
        }
    }

    pub fn model_config(
        &self,
        input_dim: usize,
        num_classes: usize,
        identity_counts: Option<Vec<usize>>,
    ) -> ModelConfig {
        ModelConfig {
            input_dim,
            extractor_widths: self.extractor_widths.clone(),
            num_classes,
            identity_counts: if self.method.uses_identifier() {
                identity_counts
            } else {
                None
            },
            id_hidden1: self.id_hidden1,
            id_hidden2: self.id_hidden2,
            dropout: self.dropout,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            fit: LinearFitConfig {
                lr: self.probe_lr,
                patience: self.probe_patience,
                max_epochs: self.probe_max_epochs,
                seed: self.seed,
                ..LinearFitConfig::default()
            },
        }
    }

    pub fn prune_config(&self) -> PruneConfig {
        let base = PruneConfig::default();
        PruneConfig {
            schedule: PruneSchedule::Fraction(self.prune_fraction),
            fit: LinearFitConfig {
                lr: self.probe_lr,
                max_epochs: self.prune_epochs,
                seed: self.seed,
                ..base.fit
            },
        }
    }
}

fn replace(template: &Map<String, Value>, key: &str, value: &Value) -> Map<String, Value> {
    let mut m = template.clone();
    m.insert(key.to_string(), value.clone());
    m
}
