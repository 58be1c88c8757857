use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Loss applied to the class logits.
///
/// CE consumes logits directly; GCE and PHuber consume softmax
/// probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Gce { q: f64 },
    Phuber { tau: f64 },
}

impl LossKind {
    pub const DEFAULT_GCE_Q: f64 = 0.7;
    pub const DEFAULT_PHUBER_TAU: f64 = 10.0;

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Ce => Ok(()),
            LossKind::Gce { q } if q > 0.0 && q <= 1.0 => Ok(()),
            LossKind::Gce { q } => Err(invalid("q", format!("{q} outside (0,1]"))),
            LossKind::Phuber { tau } if tau > 1.0 && tau.is_finite() => Ok(()),
            LossKind::Phuber { tau } => Err(invalid("tau", format!("{tau} must be > 1"))),
        }
    }

    /// Per-sample loss as a function of the target-class probability.
    pub fn of_target_prob<T: Scalar>(&self, p: T) -> T {
        match *self {
            LossKind::Ce => -p.ln(),
            LossKind::Gce { q } => crate::tensor::tape_gce_value(p, T::lit(q)),
            LossKind::Phuber { tau } => crate::tensor::tape_phuber_value(p, T::lit(tau)),
        }
    }
}

pub fn classification_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    kind: LossKind,
) -> Result<Var> {
    kind.validate()?;
    match kind {
        LossKind::Ce => tape.softmax_cross_entropy(logits, targets),
        LossKind::Gce { q } => {
            let p = tape.softmax(logits)?;
            tape.gce(p, targets, T::lit(q))
        }
        LossKind::Phuber { tau } => {
            let p = tape.softmax(logits)?;
            tape.phuber(p, targets, T::lit(tau))
        }
    }
}

/// Mean cross entropy of `[B,K]` logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let out = tape.softmax_cross_entropy(l, targets)?;
    Ok(tape.value(out).item())
}

/// Mean generalised cross entropy of row-stochastic `probs`.
pub fn gce_loss<T: Scalar>(probs: &Tensor<T>, targets: &[usize], q: T) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let out = tape.gce(p, targets, q)?;
    Ok(tape.value(out).item())
}

/// Mean partially Huberised cross entropy of row-stochastic `probs`.
pub fn phuber_loss<T: Scalar>(probs: &Tensor<T>, targets: &[usize], tau: T) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let out = tape.phuber(p, targets, tau)?;
    Ok(tape.value(out).item())
}

/// Loss of every row separately, for small-loss ranking. CE is computed
/// from log-softmax so it stays finite for confident wrong predictions.
pub fn per_sample_losses<T: Scalar>(logits: &Tensor<T>, targets: &[usize], kind: LossKind) -> Result<Vec<T>> {
    kind.validate()?;
    let (b, k) = logits.dims2()?;
    if targets.len() != b {
        return Err(invalid("targets", format!("{} targets for {b} rows", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(crate::error::AsifError::IndexOutOfRange {
            what: "target class",
            index: t,
            limit: k,
        });
    }
    let logp = crate::tensor::tape_log_softmax(logits.data(), b, k);
    Ok(targets
        .iter()
        .enumerate()
        .map(|(i, &t)| match kind {
            LossKind::Ce => -logp[i * k + t],
            _ => kind.of_target_prob(logp[i * k + t].exp()),
        })
        .collect())
}
