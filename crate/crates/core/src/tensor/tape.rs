//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends
//! one node holding its output value and what its backward rule needs, so
//! nodes are topologically ordered by construction and a backward pass is a
//! single reverse sweep.

use serde::{Deserialize, Serialize};

use super::{log_softmax_rows, matmul_raw, softmax_rows, transpose_raw, ParamId, ParamStore, Tensor};
use crate::error::{invalid, shape_err, AsifError, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running statistics of one batch-normalisation layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BnState<T> {
    pub fn new(features: usize, eps: T, momentum: T) -> Self {
        Self {
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            eps,
            momentum,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }
}

enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Mean(Var),
    Sum(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Softmax(Var),
    Gce {
        probs: Var,
        targets: Vec<usize>,
        q: T,
    },
    PHuber {
        probs: Var,
        targets: Vec<usize>,
        tau: T,
    },
    Reversal(Var, T),
    GatherRows(Var, Vec<usize>),
    Combine(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input; differentiable iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad;
        let mut value = tensor;
        value.grad = None;
        self.push(value, Op::Leaf { param: None }, rg)
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    /// Records a trainable parameter; its gradient flows back into `store`
    /// through [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let src = store.get(id);
        let value = Tensor::from_parts_unchecked(src.shape().to_vec(), src.data().to_vec());
        self.push(value, Op::Leaf { param: Some(id) }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `[B,F] + [F]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let vb = self.value(bias);
        if vb.len() != cols {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} for {cols} columns", vb.shape()),
            ));
        }
        let b = vb.data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for r in 0..rows {
            for (o, &bv) in data[r * cols..(r + 1) * cols].iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let out = Tensor::from_parts_unchecked(vec![rows, cols], data);
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x);
        let out = Tensor::from_parts_unchecked(v.shape().to_vec(), v.data().iter().map(|&a| a * c).collect());
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&a| if a > T::zero() { a } else { T::zero() })
            .collect();
        let out = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().copied().sum::<T>() / T::from_usize_lossy(v.len());
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts_unchecked(vec![1], vec![m]), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts_unchecked(vec![1], vec![s]), Op::Sum(x), rg)
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; otherwise (or
    /// when `p == 0`) the input is returned unchanged and no randomness is
    /// consumed.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("p", format!("dropout probability {p} outside [0,1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::lit(1.0 / (1.0 - p));
        let v = self.value(x);
        let mask: Vec<T> = (0..v.len())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep_scale })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Batch normalisation over the rows of `[B,F]`.
    ///
    /// Training mode normalises with the biased batch variance, then folds
    /// the batch mean and unbiased variance into the running statistics.
    /// Eval mode normalises with the running statistics.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState<T>,
        training: bool,
    ) -> Result<Var> {
        let (b, f) = self.value(x).dims2()?;
        if self.value(gamma).len() != f || self.value(beta).len() != f || state.features() != f {
            return Err(shape_err(
                "batchnorm1d",
                format!("{f} features vs scale/shift/state sizes"),
            ));
        }
        if training && b < 2 {
            return Err(invalid(
                "batch",
                format!("batchnorm in training mode needs >= 2 rows, got {b}"),
            ));
        }
        let xv = self.value(x).data();
        let mut mean = vec![T::zero(); f];
        let mut var = vec![T::zero(); f];
        if training {
            let bn = T::from_usize_lossy(b);
            for r in 0..b {
                for j in 0..f {
                    mean[j] += xv[r * f + j];
                }
            }
            for m in &mut mean {
                *m /= bn;
            }
            for r in 0..b {
                for j in 0..f {
                    let d = xv[r * f + j] - mean[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v /= bn;
            }
        } else {
            mean.clone_from(&state.running_mean);
            var.clone_from(&state.running_var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); b * f];
        for r in 0..b {
            for j in 0..f {
                xhat[r * f + j] = (xv[r * f + j] - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut out = vec![T::zero(); b * f];
        for r in 0..b {
            for j in 0..f {
                out[r * f + j] = g[j] * xhat[r * f + j] + be[j];
            }
        }
        if training {
            let m = state.momentum;
            let unbias = T::from_usize_lossy(b) / T::from_usize_lossy(b - 1);
            for j in 0..f {
                state.running_mean[j] = (T::one() - m) * state.running_mean[j] + m * mean[j];
                state.running_var[j] = (T::one() - m) * state.running_var[j] + m * var[j] * unbias;
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let value = Tensor::from_parts_unchecked(vec![b, f], out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: training,
            },
            rg,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, k) = self.value(logits).dims2()?;
        check_targets(targets, b, k)?;
        let lv = self.value(logits).data();
        let logp = log_softmax_rows(lv, b, k);
        let loss = -targets.iter().enumerate().map(|(i, &t)| logp[i * k + t]).sum::<T>() / T::from_usize_lossy(b);
        let probs = softmax_rows(lv, b, k);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![1], vec![loss]),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let (b, k) = self.value(logits).dims2()?;
        let p = softmax_rows(self.value(logits).data(), b, k);
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::from_parts_unchecked(vec![b, k], p), Op::Softmax(logits), rg))
    }

    /// Generalised cross entropy on probabilities: mean of `(1 - p_t^q) / q`.
    pub fn gce(&mut self, probs: Var, targets: &[usize], q: T) -> Result<Var> {
        if !(q > T::zero() && q <= T::one()) {
            return Err(invalid("q", format!("{q} outside (0,1]")));
        }
        let (b, k) = self.check_probs(probs, targets)?;
        let pv = self.value(probs).data();
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| gce_value(pv[i * k + t], q))
            .sum::<T>()
            / T::from_usize_lossy(b);
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![1], vec![loss]),
            Op::Gce {
                probs,
                targets: targets.to_vec(),
                q,
            },
            rg,
        ))
    }

    /// Partially Huberised cross entropy on probabilities: linear below
    /// `p_t = 1/tau`, `-ln p_t` above.
    pub fn phuber(&mut self, probs: Var, targets: &[usize], tau: T) -> Result<Var> {
        if !(tau > T::one()) || !tau.is_finite() {
            return Err(invalid("tau", format!("{tau} must be > 1")));
        }
        let (b, k) = self.check_probs(probs, targets)?;
        let pv = self.value(probs).data();
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| phuber_value(pv[i * k + t], tau))
            .sum::<T>()
            / T::from_usize_lossy(b);
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![1], vec![loss]),
            Op::PHuber {
                probs,
                targets: targets.to_vec(),
                tau,
            },
            rg,
        ))
    }

    fn check_probs(&self, probs: Var, targets: &[usize]) -> Result<(usize, usize)> {
        let (b, k) = self.value(probs).dims2()?;
        check_targets(targets, b, k)?;
        let pv = self.value(probs).data();
        let tol = T::lit(1e-4);
        for i in 0..b {
            let row = &pv[i * k..(i + 1) * k];
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol || row.iter().any(|&p| p < T::zero()) {
                return Err(invalid("probs", format!("row {i} is not a distribution (sum {s})")));
            }
        }
        Ok((b, k))
    }

    /// Identity forward; backward multiplies the incoming gradient by
    /// `-coefficient`.
    pub fn gradient_reversal(&mut self, x: Var, coefficient: T) -> Var {
        let v = self.value(x).clone();
        let rg = self.rg(&[x]);
        self.push(v, Op::Reversal(x, coefficient), rg)
    }

    /// Selects rows of a rank-2 tensor (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if rows.is_empty() {
            return Err(invalid("rows", "gather of zero rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(AsifError::IndexOutOfRange {
                what: "gathered row",
                index: bad,
                limit: r,
            });
        }
        let v = self.value(x).data();
        let data = rows
            .iter()
            .flat_map(|&i| v[i * c..(i + 1) * c].iter().copied())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![rows.len(), c], data),
            Op::GatherRows(x, rows.to_vec()),
            rg,
        ))
    }

    /// `sum_i w_i * s_i` over one-element tensors `s_i`.
    pub fn linear_combination(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut acc = T::zero();
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err(
                    "linear_combination",
                    format!("term has shape {:?}", t.shape()),
                ));
            }
            acc += w * t.item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![1], vec![acc]),
            Op::Combine(terms.to_vec()),
            rg,
        ))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("output must be scalar, got {:?}", out.shape()),
            ));
        }
        if !out.all_finite() {
            return Err(AsifError::NonFinite {
                context: "backward seed value".into(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and accumulates parameter-leaf gradients into
    /// `store`. Parameters the output does not depend on get no gradient.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(output)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, &grads.grads[i]) {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(AsifError::NonFinite {
                        context: format!("gradient of `{}` at {pos}", store.name(*id)),
                    });
                }
                store.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<T>>], to: Var, contrib: Vec<T>) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("rank 2");
                let n = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let bt = transpose_raw(self.value(*b).data(), k, n);
                    self.send(grads, *a, matmul_raw(g, &bt, m, n, k));
                }
                if self.requires_grad(*b) {
                    let at = transpose_raw(self.value(*a).data(), m, k);
                    self.send(grads, *b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.to_vec());
            }
            Op::AddBias(x, bias) => {
                self.send(grads, *x, g.to_vec());
                if self.requires_grad(*bias) {
                    let cols = self.value(*bias).len();
                    let mut gb = vec![T::zero(); cols];
                    for row in g.chunks(cols) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    self.send(grads, *bias, gb);
                }
            }
            Op::Scale(x, c) => self.send(grads, *x, g.iter().map(|&v| v * *c).collect()),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &a)| if a > T::zero() { gv } else { T::zero() })
                    .collect();
                self.send(grads, *x, gx);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.send(grads, *x, vec![g[0] / T::from_usize_lossy(n); n]);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.send(grads, *x, vec![g[0]; n]);
            }
            Op::Dropout { x, mask } => {
                self.send(grads, *x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect());
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let f = inv_std.len();
                let b = g.len() / f;
                let gam = self.value(*gamma).data();
                if self.requires_grad(*gamma) {
                    let mut dg = vec![T::zero(); f];
                    for r in 0..b {
                        for j in 0..f {
                            dg[j] += g[r * f + j] * xhat[r * f + j];
                        }
                    }
                    self.send(grads, *gamma, dg);
                }
                if self.requires_grad(*beta) {
                    let mut db = vec![T::zero(); f];
                    for r in 0..b {
                        for j in 0..f {
                            db[j] += g[r * f + j];
                        }
                    }
                    self.send(grads, *beta, db);
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); b * f];
                    if *batch_stats {
                        let bn = T::from_usize_lossy(b);
                        for j in 0..f {
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for r in 0..b {
                                let dxh = g[r * f + j] * gam[j];
                                s1 += dxh;
                                s2 += dxh * xhat[r * f + j];
                            }
                            for r in 0..b {
                                let dxh = g[r * f + j] * gam[j];
                                dx[r * f + j] = inv_std[j] / bn * (bn * dxh - s1 - xhat[r * f + j] * s2);
                            }
                        }
                    } else {
                        for r in 0..b {
                            for j in 0..f {
                                dx[r * f + j] = g[r * f + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                    self.send(grads, *x, dx);
                }
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let b = targets.len();
                let k = probs.len() / b;
                let scale = g[0] / T::from_usize_lossy(b);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * k + t] -= scale;
                }
                self.send(grads, *logits, d);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (b, k) = node.value.dims2().expect("rank 2");
                let mut d = vec![T::zero(); b * k];
                for r in 0..b {
                    let yr = &y[r * k..(r + 1) * k];
                    let gr = &g[r * k..(r + 1) * k];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &c)| a * c).sum();
                    for j in 0..k {
                        d[r * k + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.send(grads, *x, d);
            }
            Op::Gce { probs, targets, q } => {
                let pv = self.value(*probs).data();
                let b = targets.len();
                let k = pv.len() / b;
                let scale = g[0] / T::from_usize_lossy(b);
                let mut d = vec![T::zero(); pv.len()];
                for (r, &t) in targets.iter().enumerate() {
                    d[r * k + t] = -pv[r * k + t].powf(*q - T::one()) * scale;
                }
                self.send(grads, *probs, d);
            }
            Op::PHuber { probs, targets, tau } => {
                let pv = self.value(*probs).data();
                let b = targets.len();
                let k = pv.len() / b;
                let scale = g[0] / T::from_usize_lossy(b);
                let mut d = vec![T::zero(); pv.len()];
                for (r, &t) in targets.iter().enumerate() {
                    d[r * k + t] = phuber_slope(pv[r * k + t], *tau) * scale;
                }
                self.send(grads, *probs, d);
            }
            Op::Reversal(x, c) => {
                let m = -*c;
                self.send(grads, *x, g.iter().map(|&v| v * m).collect());
            }
            Op::GatherRows(x, rows) => {
                let (r, c) = self.value(*x).dims2().expect("rank 2");
                let mut d = vec![T::zero(); r * c];
                for (k, &src) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[src * c + j] += g[k * c + j];
                    }
                }
                self.send(grads, *x, d);
            }
            Op::Combine(terms) => {
                for &(v, w) in terms {
                    self.send(grads, v, vec![w * g[0]]);
                }
            }
        }
    }
}

fn check_targets(targets: &[usize], rows: usize, classes: usize) -> Result<()> {
    if targets.len() != rows {
        return Err(shape_err(
            "targets",
            format!("{} targets for {rows} rows", targets.len()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(AsifError::IndexOutOfRange {
            what: "target class",
            index: t,
            limit: classes,
        });
    }
    Ok(())
}

/// `(1 - p^q) / q`, written with `expm1` so it stays accurate as `q -> 0`.
pub(crate) fn gce_value<T: Scalar>(p: T, q: T) -> T {
    -(q * p.ln()).exp_m1() / q
}

pub(crate) fn phuber_value<T: Scalar>(p: T, tau: T) -> T {
    if p <= T::one() / tau {
        -tau * p + tau.ln() + T::one()
    } else {
        -p.ln()
    }
}

pub(crate) fn phuber_slope<T: Scalar>(p: T, tau: T) -> T {
    if p <= T::one() / tau {
        -tau
    } else {
        -T::one() / p
    }
}
