use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Cross entropy of each class head over its within-class identity
/// targets, recorded on `tape`. Classes absent from `heads` are absent from
/// the result.
pub fn per_class_identifier_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    heads: &BTreeMap<usize, (Var, Vec<usize>)>,
) -> Result<BTreeMap<usize, Var>> {
    heads
        .iter()
        .map(|(&c, (logits, targets))| Ok((c, tape.softmax_cross_entropy(*logits, targets)?)))
        .collect()
}

/// Value-only form of [`per_class_identifier_loss_on_tape`].
pub fn per_class_identifier_loss<T: Scalar>(
    identity_logits: &BTreeMap<usize, Tensor<T>>,
    identity_targets: &BTreeMap<usize, Vec<usize>>,
) -> Result<BTreeMap<usize, T>> {
    let mut tape = Tape::new();
    let mut heads = BTreeMap::new();
    for (&c, logits) in identity_logits {
        let targets = identity_targets
            .get(&c)
            .ok_or_else(|| invalid("identity_targets", format!("no targets for class {c}")))?;
        heads.insert(c, (tape.constant(logits.clone()), targets.clone()));
    }
    let vars = per_class_identifier_loss_on_tape(&mut tape, &heads)?;
    Ok(vars.into_iter().map(|(c, v)| (c, tape.value(v).item())).collect())
}

fn check_shares<T: Scalar, V>(id_losses: &BTreeMap<usize, V>, shares: &BTreeMap<usize, T>) -> Result<()> {
    if !id_losses.keys().eq(shares.keys()) {
        return Err(invalid("class_shares", "classes differ from the identifier losses"));
    }
    if shares.is_empty() {
        return Ok(());
    }
    let total: T = shares.values().copied().sum();
    if (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0))
        || shares.values().any(|&s| s < T::zero())
    {
        return Err(invalid("class_shares", format!("shares sum to {total}, expected 1")));
    }
    Ok(())
}

/// `cls + lambda_id * sum_c share_c * id_c`.
pub fn combine_asif_losses<T: Scalar>(
    cls_loss: T,
    id_losses: &BTreeMap<usize, T>,
    class_shares: &BTreeMap<usize, T>,
    lambda_id: T,
) -> Result<T> {
    check_shares(id_losses, class_shares)?;
    let weighted: T = id_losses.iter().map(|(c, &l)| class_shares[c] * l).sum();
    Ok(cls_loss + lambda_id * weighted)
}

/// Differentiable form of [`combine_asif_losses`].
pub fn combine_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cls_loss: Var,
    id_losses: &BTreeMap<usize, Var>,
    class_shares: &BTreeMap<usize, T>,
    lambda_id: T,
) -> Result<Var> {
    check_shares(id_losses, class_shares)?;
    let mut terms = vec![(cls_loss, T::one())];
    terms.extend(id_losses.iter().map(|(c, &v)| (v, lambda_id * class_shares[c])));
    tape.linear_combination(&terms)
}
