use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::linear::{fit_linear, LinearFitConfig};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub fit: LinearFitConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Lowest full-set identification loss reached.
    pub best_loss: f64,
    pub epochs_run: usize,
    pub curve: Vec<f64>,
}

/// How well a single linear layer can tell the samples apart from their
/// frozen features: every sample is its own class.
pub fn identity_probe(features: &BTreeMap<usize, Vec<f64>>, config: &ProbeConfig) -> Result<ProbeReport> {
    if features.is_empty() {
        return Err(invalid("features", "empty feature set"));
    }
    if features.len() == 1 {
        return Ok(ProbeReport {
            best_loss: 0.0,
            epochs_run: 0,
            curve: Vec::new(),
        });
    }
    let x: Vec<Vec<f64>> = features.values().cloned().collect();
    let y: Vec<usize> = (0..x.len()).collect();
    let fit = fit_linear(&x, &y, x.len(), &config.fit, None)?;
    Ok(ProbeReport {
        best_loss: fit.best_loss,
        epochs_run: fit.epochs_run,
        curve: fit.loss_curve,
    })
}
