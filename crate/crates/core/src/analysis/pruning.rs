use serde::{Deserialize, Serialize};

use super::linear::{fit_linear, LinearFitConfig};
use crate::error::{invalid, Result};

/// Dimensions left when pruning stops.
pub const FINAL_DIMS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum PruneSchedule {
    /// Drop this fraction of the remaining dims each step, at least one.
    Fraction(f64),
    /// Drop this many dims each step.
    Fixed(usize),
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self::Fraction(0.1)
    }
}

impl PruneSchedule {
    fn drop_count(&self, remaining: usize) -> usize {
        let d = match *self {
            Self::Fraction(f) => (remaining as f64 * f).floor() as usize,
            Self::Fixed(k) => k,
        };
        d.max(1).min(remaining - FINAL_DIMS)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Fraction(f) if !(f > 0.0 && f < 1.0) => Err(invalid("prune_fraction", format!("{f} outside (0,1)"))),
            Self::Fixed(0) => Err(invalid("prune_fixed", "must drop at least one dim")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub schedule: PruneSchedule,
    pub fit: LinearFitConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            schedule: PruneSchedule::default(),
            fit: LinearFitConfig {
                max_epochs: 100,
                ..LinearFitConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningStep {
    pub retained_dims: usize,
    pub best_accuracy: f64,
    /// Original indices of the dims used at this step, ascending.
    pub retained: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningCurve {
    pub steps: Vec<PruningStep>,
}

impl PruningCurve {
    pub fn points(&self) -> Vec<(usize, f64)> {
        self.steps.iter().map(|s| (s.retained_dims, s.best_accuracy)).collect()
    }
}

fn select(rows: &[Vec<f64>], dims: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| dims.iter().map(|&d| r[d]).collect()).collect()
}

/// Repeatedly fits a fresh linear classifier on the retained dims, records
/// its best accuracy, and drops the dims with the smallest L1 weight norm
/// until five remain. Accuracy is measured on `eval` when given, otherwise
/// on the training rows.
pub fn feature_pruning_curve(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    eval: Option<(&[Vec<f64>], &[usize])>,
    config: &PruneConfig,
) -> Result<PruningCurve> {
    config.schedule.validate()?;
    let width = features.first().map_or(0, Vec::len);
    if width < FINAL_DIMS {
        return Err(invalid("features", format!("{width} dims, need at least {FINAL_DIMS}")));
    }
    if features.iter().any(|r| r.len() != width) || eval.is_some_and(|(ex, _)| ex.iter().any(|r| r.len() != width)) {
        return Err(invalid("features", "ragged feature rows"));
    }
    let mut retained: Vec<usize> = (0..width).collect();
    let mut steps = Vec::new();
    loop {
        let x = select(features, &retained);
        let ex = eval.map(|(e, _)| select(e, &retained));
        let fit = fit_linear(
            &x,
            labels,
            classes,
            &config.fit,
            ex.as_deref().zip(eval.map(|(_, y)| y)),
        )?;
        steps.push(PruningStep {
            retained_dims: retained.len(),
            best_accuracy: fit.best_accuracy,
            retained: retained.clone(),
        });
        if retained.len() == FINAL_DIMS {
            break;
        }
        let w = &fit.weight;
        let mut scored: Vec<(f64, usize)> = (0..retained.len())
            .map(|i| (w.row(i).iter().map(|v| v.abs()).sum::<f64>(), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(retained[a.1].cmp(&retained[b.1])));
        let drop: std::collections::BTreeSet<usize> = scored
            .iter()
            .take(config.schedule.drop_count(retained.len()))
            .map(|&(_, i)| i)
            .collect();
        retained = retained
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, &d)| d)
            .collect();
    }
    Ok(PruningCurve { steps })
}
