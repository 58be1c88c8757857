use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::inject::flip_count;
use super::ledger::NoiseLedger;
use crate::error::{invalid, AsifError, Result};

/// Small-loss detection: the `round(N*eta)` samples with the largest
/// classification loss, ties by ascending id.
pub fn detect_noisy(losses: &BTreeMap<usize, f64>, eta: f64) -> Result<BTreeSet<usize>> {
    if let Some((id, l)) = losses.iter().find(|(_, l)| !l.is_finite()) {
        return Err(AsifError::NonFinite {
            context: format!("loss {l} of sample {id}"),
        });
    }
    let k = flip_count(losses.len(), eta)?;
    let mut ranked: Vec<(usize, f64)> = losses.iter().map(|(&id, &l)| (id, l)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|(id, _)| id).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub f1: f64,
    /// Mean of the true positive and true negative rates; a rate whose
    /// class is absent from the ledger is left out of the mean.
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Scores flagged ids against the ledger's `was_flipped` column.
pub fn detection_metrics(flagged: &BTreeSet<usize>, ledger: &NoiseLedger) -> Result<DetectionScores> {
    let known: BTreeSet<usize> = ledger.entries.iter().map(|e| e.sample_id).collect();
    if let Some(stray) = flagged.difference(&known).next() {
        return Err(invalid("flagged", format!("sample {stray} is not in the ledger")));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for e in &ledger.entries {
        match (flagged.contains(&e.sample_id), e.was_flipped) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    let precision = ratio(tp, tp + fp).unwrap_or(0.0);
    let recall = ratio(tp, tp + fn_).unwrap_or(0.0);
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let rates: Vec<f64> = [ratio(tp, tp + fn_), ratio(tn, tn + fp)]
        .into_iter()
        .flatten()
        .collect();
    let balanced_accuracy = if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    };
    Ok(DetectionScores {
        f1,
        balanced_accuracy,
        precision,
        recall,
    })
}
