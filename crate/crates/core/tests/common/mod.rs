#![allow(dead_code)]
pub mod cases;

use asif::data::{Dataset, Sample};
use asif::tensor::{Tape, Tensor, Var};
use asif::{Result, RngStream};

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Absolute floor for gradients that are zero up to rounding.
pub const ABS_FLOOR: f64 = 1e-7;

pub fn random_tensor(rng: &mut RngStream, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Largest violation ratio `|analytic - numeric| / (REL_TOL * max(|a|,|n|) + ABS_FLOOR)`
/// over every input element; the check passes when this is at most 1.
///
/// `build` records a scalar on a fresh tape from leaves holding `inputs`;
/// `scale` multiplies the analytic gradient before comparison, for ops
/// whose backward is deliberately not the derivative.
pub fn gradcheck_scaled<F>(inputs: &[Tensor<f64>], scale: f64, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone().with_requires_grad())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad()))
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(vars[k])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for (j, &g) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = g * scale;
            let ratio = (a - numeric).abs() / (REL_TOL * a.abs().max(numeric.abs()) + ABS_FLOOR);
            worst = worst.max(ratio);
        }
    }
    worst
}

pub fn gradcheck<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    gradcheck_scaled(inputs, 1.0, build)
}

/// Reduces a `[r,c]` tensor to `u^T x w` with fixed random `u`, `w`, so
/// every element gets its own upstream gradient `u_i w_j`.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(x).dims2()?;
    let mut rng = RngStream::new(seed);
    let u = tape.constant(random_tensor(&mut rng, &[1, r], 1.0));
    let w = tape.constant(random_tensor(&mut rng, &[c, 1], 1.0));
    let xw = tape.matmul(x, w)?;
    let s = tape.matmul(u, xw)?;
    Ok(tape.sum(s))
}

/// `n_per_class` samples per class with distinct, well-separated features.
pub fn toy_dataset(classes: usize, n_per_class: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let mut samples = Vec::new();
    for c in 0..classes {
        for _ in 0..n_per_class {
            let mut f: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            f[c % dim] += 3.0;
            samples.push(Sample {
                id: samples.len(),
                features: f,
                true_label: c,
                observed_label: c,
            });
        }
    }
    Dataset::new(samples, classes).unwrap()
}
