use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dgr::{DgrMode, DgrSign, DgrState};
use super::network::AsifModel;
use crate::data::Batch;
use crate::error::{invalid, AsifError, Result};
use crate::losses::{classification_loss, combine_on_tape, per_class_identifier_loss_on_tape, LossKind};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{Sgd, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub lambda_id: f64,
    pub loss: LossKind,
    pub dgr_sign: DgrSign,
}

/// What one optimisation step observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub total_loss: f64,
    pub classification_loss: f64,
    pub per_class_id_losses: BTreeMap<usize, f64>,
    /// `B_c / B` for every class present in the batch.
    pub class_shares: BTreeMap<usize, f64>,
    /// Reversal coefficient each head used during this step.
    pub coefficients: BTreeMap<usize, f64>,
    /// Controller lambda of each present head after its update.
    pub lambdas: BTreeMap<usize, f64>,
    /// Batch-share weighted mean of `lambdas`.
    pub trunk_lambda: Option<f64>,
}

/// One ASIF optimisation step.
///
/// Forward with the current reversal coefficients, total loss
/// `L_cls + lambda_id * sum_c (B_c/B) L_id_c`, one backward pass, one SGD
/// step over every parameter that received a gradient, then one controller
/// update per head present in the batch.
pub fn asif_training_step<T: Scalar>(
    model: &mut AsifModel<T>,
    dgr: &mut [DgrState],
    optimizer: &mut Sgd<T>,
    batch: &Batch<T>,
    config: &StepConfig,
    dropout_rng: &mut RngStream,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(invalid("batch", "empty"));
    }
    let has_identifier = model.identifier.is_some();
    if has_identifier && dgr.len() != model.num_classes() {
        return Err(invalid(
            "dgr",
            format!("{} controller states for {} classes", dgr.len(), model.num_classes()),
        ));
    }
    let coefficients: Vec<T> = if has_identifier {
        dgr.iter()
            .map(|s| T::lit(s.reversal_coefficient(config.dgr_sign)))
            .collect()
    } else {
        Vec::new()
    };

    let mut tape = Tape::new();
    let out = model.forward(
        &mut tape,
        &batch.inputs,
        &batch.observed,
        &batch.identity,
        true,
        &coefficients,
        dropout_rng,
    )?;
    let cls = classification_loss(&mut tape, out.class_logits, &batch.observed, config.loss)?;

    let b = batch.len() as f64;
    let heads = out
        .identity
        .iter()
        .map(|(&c, br)| (c, (br.logits, br.targets.clone())))
        .collect();
    let id_losses = per_class_identifier_loss_on_tape(&mut tape, &heads)?;
    let shares_f64: BTreeMap<usize, f64> = out
        .identity
        .iter()
        .map(|(&c, br)| (c, br.rows.len() as f64 / b))
        .collect();
    let shares: BTreeMap<usize, T> = shares_f64.iter().map(|(&c, &s)| (c, T::lit(s))).collect();
    let total = combine_on_tape(&mut tape, cls, &id_losses, &shares, T::lit(config.lambda_id))?;

    let total_value = tape.value(total).item().as_f64();
    if !total_value.is_finite() {
        return Err(AsifError::NonFinite {
            context: format!("total loss (classification {})", tape.value(cls).item()),
        });
    }
    tape.backward_into(total, &mut model.params)?;
    optimizer.step_present(&mut model.params)?;

    let per_class: BTreeMap<usize, f64> = id_losses
        .iter()
        .map(|(&c, &v)| (c, tape.value(v).item().as_f64()))
        .collect();
    let coeff_used = per_class.keys().map(|&c| (c, coefficients[c].as_f64())).collect();
    let mut lambdas = BTreeMap::new();
    for (&c, &l) in &per_class {
        let state = &mut dgr[c];
        if state.controllable() {
            state.update(l)?;
        }
        lambdas.insert(c, state.lambda);
    }
    let trunk_lambda = (!lambdas.is_empty()).then(|| lambdas.iter().map(|(c, l)| shares_f64[c] * l).sum());
    Ok(StepReport {
        total_loss: total_value,
        classification_loss: tape.value(cls).item().as_f64(),
        per_class_id_losses: per_class,
        class_shares: shares_f64,
        coefficients: coeff_used,
        lambdas,
        trunk_lambda,
    })
}

/// Model, optimiser and reversal controllers of one training session.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: AsifModel<T>,
    pub dgr: Vec<DgrState>,
    pub optimizer: Sgd<T>,
    pub step: StepConfig,
    pub dropout_rng: RngStream,
}

impl<T: Scalar> Trainer<T> {
    /// Builds controllers for every head: dynamic, or fixed at
    /// `fixed_lambda` when given.
    pub fn new(
        model: AsifModel<T>,
        optimizer: Sgd<T>,
        step: StepConfig,
        fixed_lambda: Option<f64>,
        dropout_rng: RngStream,
    ) -> Result<Self> {
        let dgr = match &model.identifier {
            Some(idm) => idm
                .identity_counts
                .iter()
                .map(|&n| match fixed_lambda {
                    Some(l) => DgrState::fixed(n.max(1), l),
                    None => DgrState::dynamic(n.max(1)),
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(Self {
            model,
            dgr,
            optimizer,
            step,
            dropout_rng,
        })
    }

    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<StepReport> {
        asif_training_step(
            &mut self.model,
            &mut self.dgr,
            &mut self.optimizer,
            batch,
            &self.step,
            &mut self.dropout_rng,
        )
    }

    pub fn mode(&self) -> Option<DgrMode> {
        self.dgr.first().map(|s| s.mode)
    }
}
