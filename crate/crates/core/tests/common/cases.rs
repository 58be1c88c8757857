//! Gradient-check instances for every differentiable op and for the full
//! ASIF graph. Each case maps a seed to a worst violation ratio (pass <= 1).

use std::collections::BTreeMap;

use asif::losses::{classification_loss, combine_on_tape, per_class_identifier_loss_on_tape, LossKind};
use asif::model::{AsifModel, ModelConfig};
use asif::tensor::{BnState, ParamId, Tape, Tensor};
use asif::RngStream;

use super::{gradcheck, gradcheck_scaled, random_tensor, weighted_sum, ABS_FLOOR, H, REL_TOL};

pub type Case = (&'static str, fn(u64) -> f64);

fn dims(rng: &mut RngStream) -> (usize, usize, usize) {
    (2 + rng.below(4), 2 + rng.below(4), 2 + rng.below(4))
}

fn targets(rng: &mut RngStream, b: usize, k: usize) -> Vec<usize> {
    (0..b).map(|_| rng.below(k)).collect()
}

fn matmul(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, k, n) = dims(&mut rng);
    let inputs = [
        random_tensor(&mut rng, &[m, k], 1.0),
        random_tensor(&mut rng, &[k, n], 1.0),
    ];
    gradcheck(&inputs, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, seed)
    })
}

fn add(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let inputs = [
        random_tensor(&mut rng, &[m, n], 1.0),
        random_tensor(&mut rng, &[m, n], 1.0),
    ];
    gradcheck(&inputs, |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, seed)
    })
}

fn add_bias(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let inputs = [
        random_tensor(&mut rng, &[m, n], 1.0),
        random_tensor(&mut rng, &[n], 1.0),
    ];
    gradcheck(&inputs, |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        weighted_sum(t, y, seed)
    })
}

fn scale(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let c = rng.normal() * 2.0;
    let inputs = [random_tensor(&mut rng, &[m, n], 1.0)];
    gradcheck(&inputs, |t, v| {
        let y = t.scale(v[0], c);
        weighted_sum(t, y, seed)
    })
}

fn relu(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let mut x = random_tensor(&mut rng, &[m, n], 1.0);
    // Keep every input well clear of the kink.
    for v in x.data_mut() {
        if v.abs() < 1e-2 {
            *v += 0.1;
        }
    }
    gradcheck(&[x], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, seed)
    })
}

fn mean_and_sum(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let inputs = [random_tensor(&mut rng, &[m, n], 1.0)];
    let a = gradcheck(&inputs, |t, v| {
        let y = t.mean(v[0]);
        Ok(t.scale(y, 3.0))
    });
    let b = gradcheck(&inputs, |t, v| Ok(t.sum(v[0])));
    a.max(b)
}

fn dropout(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let inputs = [random_tensor(&mut rng, &[m, n], 1.0)];
    gradcheck(&inputs, |t, v| {
        let mut mask_rng = RngStream::new(seed ^ 0xd0);
        let y = t.dropout(v[0], 0.4, true, &mut mask_rng)?;
        weighted_sum(t, y, seed)
    })
}

fn batchnorm(training: bool, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (b, f, _) = dims(&mut rng);
    let mut state = BnState::new(f, 1e-5, 0.1);
    state.running_mean = (0..f).map(|_| rng.normal()).collect();
    state.running_var = (0..f).map(|_| 0.5 + rng.uniform()).collect();
    let inputs = [
        random_tensor(&mut rng, &[b, f], 1.0),
        random_tensor(&mut rng, &[f], 1.0),
        random_tensor(&mut rng, &[f], 1.0),
    ];
    gradcheck(&inputs, |t, v| {
        let mut s = state.clone();
        let y = t.batchnorm1d(v[0], v[1], v[2], &mut s, training)?;
        weighted_sum(t, y, seed)
    })
}

fn bn_train(seed: u64) -> f64 {
    batchnorm(true, seed)
}

fn bn_eval(seed: u64) -> f64 {
    batchnorm(false, seed)
}

fn softmax_ce(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (b, k, _) = dims(&mut rng);
    let y = targets(&mut rng, b, k);
    gradcheck(&[random_tensor(&mut rng, &[b, k], 2.0)], |t, v| {
        t.softmax_cross_entropy(v[0], &y)
    })
}

fn softmax(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (b, k, _) = dims(&mut rng);
    gradcheck(&[random_tensor(&mut rng, &[b, k], 2.0)], |t, v| {
        let p = t.softmax(v[0])?;
        weighted_sum(t, p, seed)
    })
}

fn gce(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (b, k, _) = dims(&mut rng);
    let y = targets(&mut rng, b, k);
    let q = 0.1 + 0.9 * rng.uniform();
    gradcheck(&[random_tensor(&mut rng, &[b, k], 2.0)], |t, v| {
        let p = t.softmax(v[0])?;
        t.gce(p, &y, q)
    })
}

fn phuber(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (b, k, _) = dims(&mut rng);
    let y = targets(&mut rng, b, k);
    let tau = 1.5 + 8.0 * rng.uniform();
    let logits = random_tensor(&mut rng, &[b, k], 3.0);
    // Skip instances whose target probability sits on the kink at 1/tau.
    let probs = softmax_rows(&logits);
    if y.iter()
        .enumerate()
        .any(|(i, &t)| (probs[i * k + t] - 1.0 / tau).abs() < 1e-3)
    {
        return 0.0;
    }
    gradcheck(&[logits], |t, v| {
        let p = t.softmax(v[0])?;
        t.phuber(p, &y, tau)
    })
}

fn softmax_rows(x: &Tensor<f64>) -> Vec<f64> {
    let (b, k) = x.dims2().unwrap();
    let mut out = Vec::with_capacity(b * k);
    for i in 0..b {
        let row = x.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn reversal(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let mut c = rng.normal() * 2.0;
    if c.abs() < 0.1 {
        c = 0.5;
    }
    // Backward is -c times the derivative of the identity forward.
    gradcheck_scaled(&[random_tensor(&mut rng, &[m, n], 1.0)], -1.0 / c, |t, v| {
        let y = t.gradient_reversal(v[0], c);
        weighted_sum(t, y, seed)
    })
}

fn gather(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (m, n, _) = dims(&mut rng);
    let rows: Vec<usize> = (0..1 + rng.below(2 * m)).map(|_| rng.below(m)).collect();
    gradcheck(&[random_tensor(&mut rng, &[m, n], 1.0)], |t, v| {
        let y = t.gather_rows(v[0], &rows)?;
        weighted_sum(t, y, seed)
    })
}

fn combine(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let k = 1 + rng.below(4);
    let inputs: Vec<Tensor<f64>> = (0..k).map(|_| random_tensor(&mut rng, &[1], 1.0)).collect();
    let w: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
    gradcheck(&inputs, |t, v| {
        let terms: Vec<_> = v.iter().copied().zip(w.iter().copied()).collect();
        t.linear_combination(&terms)
    })
}

pub fn op_cases() -> Vec<Case> {
    vec![
        ("matmul", matmul),
        ("add", add),
        ("add_bias", add_bias),
        ("scale", scale),
        ("relu", relu),
        ("mean/sum", mean_and_sum),
        ("dropout", dropout),
        ("batchnorm1d train", bn_train),
        ("batchnorm1d eval", bn_eval),
        ("softmax_cross_entropy", softmax_ce),
        ("softmax", softmax),
        ("gce", gce),
        ("phuber", phuber),
        ("gradient_reversal", reversal),
        ("gather_rows", gather),
        ("linear_combination", combine),
    ]
}

/// Total ASIF objective of a tiny model, differentiated with respect to
/// every parameter. Reversal coefficients are -1 so the backward pass is the
/// true derivative.
pub fn full_graph(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let classes = 3;
    let per_class = 2 + rng.below(2);
    let b = classes * per_class;
    let counts = vec![per_class + 1, per_class, per_class + 2];
    let config = ModelConfig {
        input_dim: 4,
        extractor_widths: vec![5, 4],
        num_classes: classes,
        identity_counts: Some(counts.clone()),
        id_hidden1: 4,
        id_hidden2: 3,
        dropout: 0.3,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
    };
    let mut model = AsifModel::<f64>::new(config, seed).unwrap();
    // Move off the initial point: zero batch-norm shifts put collapsed rows
    // exactly on a ReLU kink.
    let ids: Vec<ParamId> = model.params.ids().collect();
    for &id in &ids {
        for v in model.params.get_mut(id).data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    let x = random_tensor(&mut rng, &[b, 4], 1.0);
    let observed: Vec<usize> = (0..b).map(|i| i % classes).collect();
    let identity: Vec<usize> = observed.iter().map(|&c| rng.below(counts[c])).collect();
    let lambda_id = 0.5 + rng.uniform();
    let kind = match seed % 3 {
        0 => LossKind::Ce,
        1 => LossKind::Gce { q: 0.7 },
        _ => LossKind::Phuber { tau: 3.0 },
    };

    let loss_of = |m: &AsifModel<f64>, store_grads: bool| -> (f64, Option<AsifModel<f64>>) {
        let mut m = m.clone();
        let mut tape = Tape::new();
        let mut drop_rng = RngStream::new(seed ^ 0xabc);
        let out = m
            .forward(&mut tape, &x, &observed, &identity, true, &[-1.0; 3], &mut drop_rng)
            .unwrap();
        let cls = classification_loss(&mut tape, out.class_logits, &observed, kind).unwrap();
        let heads = out
            .identity
            .iter()
            .map(|(&c, br)| (c, (br.logits, br.targets.clone())))
            .collect();
        let ids = per_class_identifier_loss_on_tape(&mut tape, &heads).unwrap();
        let shares: BTreeMap<usize, f64> = out
            .identity
            .iter()
            .map(|(&c, br)| (c, br.rows.len() as f64 / b as f64))
            .collect();
        let total = combine_on_tape(&mut tape, cls, &ids, &shares, lambda_id).unwrap();
        let v = tape.value(total).item();
        if store_grads {
            tape.backward_into(total, &mut m.params).unwrap();
            (v, Some(m))
        } else {
            (v, None)
        }
    };

    let (_, with_grads) = loss_of(&model, true);
    let with_grads = with_grads.unwrap();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = with_grads
            .params
            .grad(id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; model.params.get(id).len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            plus.params.get_mut(id).data_mut()[j] += H;
            let mut minus = model.clone();
            minus.params.get_mut(id).data_mut()[j] -= H;
            let numeric = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * H);
            let r = (a - numeric).abs() / (REL_TOL * a.abs().max(numeric.abs()) + ABS_FLOOR);
            if r > 1.0 && std::env::var("GRADCHECK_DEBUG").is_ok() {
                eprintln!("{} [{j}]: analytic {a} numeric {numeric}", model.params.name(id));
            }
            worst = worst.max(r);
        }
    }
    worst
}
