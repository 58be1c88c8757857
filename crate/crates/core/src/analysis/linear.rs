use serde::{Deserialize, Serialize};

use crate::data::BatchIterator;
use crate::error::{invalid, Result};
use crate::losses::{softmax_cross_entropy, ConfusionMatrix};
use crate::rng::RngStream;
use crate::tensor::{ParamStore, Sgd, Tape, Tensor};

/// Minibatch SGD settings for a single linear layer trained with
/// cross-entropy from zero initialisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFitConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a training-loss improvement before stopping.
    pub patience: usize,
    /// Relative drop the loss must make to count as an improvement.
    pub min_rel_improvement: f64,
    pub seed: u64,
}

impl Default for LinearFitConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 500,
            patience: 10,
            min_rel_improvement: 1e-4,
            seed: 0,
        }
    }
}

impl LinearFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("linear_fit", "lr must be > 0 and momentum in [0,1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(invalid("linear_fit", "batch_size and max_epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LinearFit {
    /// Final `[F, C]` weights.
    pub weight: Tensor<f64>,
    pub bias: Vec<f64>,
    /// Full training-set loss after each epoch.
    pub loss_curve: Vec<f64>,
    /// Accuracy after each epoch, on the evaluation set when one is given.
    pub accuracy_curve: Vec<f64>,
    pub best_loss: f64,
    pub best_accuracy: f64,
    pub epochs_run: usize,
}

fn to_tensor(rows: &[Vec<f64>]) -> Result<Tensor<f64>> {
    Tensor::from_rows(rows)
}

fn logits(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Result<Tensor<f64>> {
    let mut z = x.matmul(w)?;
    let c = b.len();
    for (i, v) in z.data_mut().iter_mut().enumerate() {
        *v += b[i % c];
    }
    Ok(z)
}

fn accuracy_of(x: &Tensor<f64>, y: &[usize], w: &Tensor<f64>, b: &[f64]) -> Result<f64> {
    let pred = logits(x, w, b)?.argmax_rows()?;
    Ok(crate::losses::accuracy(&ConfusionMatrix::from_predictions(
        y,
        &pred,
        b.len(),
    )?))
}

/// Trains `x -> softmax(xW + b)` on labels `y` in `0..classes`.
pub fn fit_linear(
    x: &[Vec<f64>],
    y: &[usize],
    classes: usize,
    config: &LinearFitConfig,
    eval: Option<(&[Vec<f64>], &[usize])>,
) -> Result<LinearFit> {
    config.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(invalid("features", format!("{} rows for {} labels", x.len(), y.len())));
    }
    if classes == 0 {
        return Err(invalid("classes", "must be positive"));
    }
    let xt = to_tensor(x)?;
    let (n, f) = xt.dims2()?;
    let eval_t = match eval {
        Some((ex, ey)) => Some((to_tensor(ex)?, ey)),
        None => None,
    };

    let mut store = ParamStore::new();
    let wid = store.register("probe.weight", Tensor::zeros(&[f, classes]));
    let bid = store.register("probe.bias", Tensor::zeros(&[classes]));
    let mut sgd = Sgd::new(config.lr, config.momentum)?;
    let mut batches = BatchIterator::new(
        n,
        config.batch_size,
        RngStream::derive(config.seed, crate::rng::streams::ANALYSIS),
    )?;

    let mut loss_curve = Vec::new();
    let mut accuracy_curve = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_accuracy = 0.0f64;
    let mut stale = 0;
    for _ in 0..config.max_epochs {
        for rows in batches.next_epoch() {
            let xb: Vec<f64> = rows.iter().flat_map(|&r| xt.row(r).iter().copied()).collect();
            let yb: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::new(vec![rows.len(), f], xb)?);
            let w = tape.param(&store, wid);
            let b = tape.param(&store, bid);
            let h = tape.matmul(xv, w)?;
            let z = tape.add_bias(h, b)?;
            let loss = tape.softmax_cross_entropy(z, &yb)?;
            tape.backward_into(loss, &mut store)?;
            sgd.step(&mut store, &[wid, bid])?;
        }
        let w = store.get(wid);
        let b = store.get(bid).data();
        let loss = softmax_cross_entropy(&logits(&xt, w, b)?, y)?;
        let acc = match &eval_t {
            Some((ex, ey)) => accuracy_of(ex, ey, w, b)?,
            None => accuracy_of(&xt, y, w, b)?,
        };
        loss_curve.push(loss);
        accuracy_curve.push(acc);
        best_accuracy = best_accuracy.max(acc);
        if loss < best_loss * (1.0 - config.min_rel_improvement) {
            best_loss = loss;
            stale = 0;
        } else {
            best_loss = best_loss.min(loss);
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(LinearFit {
        weight: store.get(wid).clone(),
        bias: store.get(bid).data().to_vec(),
        epochs_run: loss_curve.len(),
        loss_curve,
        accuracy_curve,
        best_loss,
        best_accuracy,
    })
}
