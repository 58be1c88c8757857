//! Training state saved as JSON. Floats are written in shortest round-trip
//! form, so a reload reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{AsifError, Result};
use crate::model::{AsifModel, DgrState, ModelConfig, Trainer};
use crate::rng::RngStream;
use crate::tensor::{BnState, Sgd, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream: u64,
    pub position: u128,
}

impl RngSnapshot {
    pub fn of(rng: &RngStream) -> Self {
        Self {
            seed: rng.seed(),
            stream: rng.stream(),
            position: rng.position(),
        }
    }

    pub fn restore(&self) -> RngStream {
        RngStream::restore(self.seed, self.stream, self.position)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Epochs completed.
    pub epoch: usize,
    pub experiment: ExperimentConfig,
    pub model: ModelConfig,
    pub params: Vec<SavedParam>,
    pub batchnorm: Vec<BnState<f64>>,
    pub dgr: Vec<DgrState>,
    pub lr: f64,
    pub momentum: f64,
    pub velocities: Vec<Option<Vec<f64>>>,
    pub rngs: BTreeMap<String, RngSnapshot>,
}

impl Checkpoint {
    pub fn capture(
        experiment: &ExperimentConfig,
        trainer: &Trainer<f64>,
        epoch: usize,
        rngs: BTreeMap<String, RngSnapshot>,
    ) -> Self {
        let store = &trainer.model.params;
        let params = store
            .ids()
            .map(|id| SavedParam {
                name: store.name(id).to_string(),
                shape: store.get(id).shape().to_vec(),
                data: store.get(id).data().to_vec(),
            })
            .collect();
        let mut all_rngs = rngs;
        all_rngs.insert("dropout".into(), RngSnapshot::of(&trainer.dropout_rng));
        Self {
            version: CHECKPOINT_VERSION,
            epoch,
            experiment: experiment.clone(),
            model: trainer.model.config.clone(),
            params,
            batchnorm: trainer.model.bn_states().into_iter().cloned().collect(),
            dgr: trainer.dgr.clone(),
            lr: trainer.optimizer.lr,
            momentum: trainer.optimizer.momentum,
            velocities: trainer.optimizer.velocities().to_vec(),
            rngs: all_rngs,
        }
    }

    /// Rebuilds the model with every saved parameter and running statistic.
    pub fn model(&self) -> Result<AsifModel<f64>> {
        let mut model = AsifModel::new(self.model.clone(), self.experiment.seed)?;
        if model.params.len() != self.params.len() {
            return Err(AsifError::Checkpoint(format!(
                "{} saved parameters, architecture has {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for p in &self.params {
            let id = model
                .params
                .find(&p.name)
                .ok_or_else(|| AsifError::Checkpoint(format!("unknown parameter {}", p.name)))?;
            if model.params.get(id).shape() != p.shape.as_slice() {
                return Err(AsifError::Checkpoint(format!("shape mismatch for {}", p.name)));
            }
            let grad_flag = model.params.get(id).requires_grad;
            let mut t = Tensor::new(p.shape.clone(), p.data.clone())?;
            t.requires_grad = grad_flag;
            *model.params.get_mut(id) = t;
        }
        let slots = model.bn_states_mut();
        if slots.len() != self.batchnorm.len() {
            return Err(AsifError::Checkpoint(format!(
                "{} saved batch-norm states, architecture has {}",
                self.batchnorm.len(),
                slots.len()
            )));
        }
        for (slot, saved) in slots.into_iter().zip(&self.batchnorm) {
            if slot.features() != saved.features() {
                return Err(AsifError::Checkpoint("batch-norm width mismatch".into()));
            }
            *slot = saved.clone();
        }
        Ok(model)
    }

    /// Rebuilds the full trainer, ready to continue from `epoch`.
    pub fn trainer(&self) -> Result<Trainer<f64>> {
        let model = self.model()?;
        let mut optimizer = Sgd::new(self.lr, self.momentum)?;
        optimizer.set_velocities(self.velocities.clone());
        let dropout = self
            .rngs
            .get("dropout")
            .ok_or_else(|| AsifError::Checkpoint("missing dropout stream".into()))?
            .restore();
        let step = super::run::step_config(&self.experiment);
        let mut trainer = Trainer::new(model, optimizer, step, None, dropout)?;
        trainer.dgr = self.dgr.clone();
        Ok(trainer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(AsifError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }
}
