use crate::error::Result;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{BnState, ParamId, ParamStore, Tape, Tensor, Var};

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialisation of weight and bias.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut RngStream,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.uniform_range(-bound, bound))).collect() };
        let w = Tensor::from_parts_unchecked(vec![input, output], draw(input * output));
        let b = Tensor::from_parts_unchecked(vec![output], draw(output));
        Self {
            weight: store.register(format!("{name}.weight"), w),
            bias: store.register(format!("{name}.bias"), b),
            input,
            output,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Batch normalisation with learned scale and shift.
#[derive(Clone, Debug)]
pub struct BatchNorm1d<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BnState<T>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, features: usize, eps: T, momentum: T) -> Self {
        Self {
            gamma: store.register(format!("{name}.gamma"), Tensor::full(&[features], T::one())),
            beta: store.register(format!("{name}.beta"), Tensor::zeros(&[features])),
            state: BnState::new(features, eps, momentum),
        }
    }

    /// A single-row group in training mode cannot form batch statistics; it
    /// is normalised with the running statistics, which are left untouched.
    pub fn forward(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, training: bool) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let rows = tape.shape(x)[0];
        tape.batchnorm1d(x, g, b, &mut self.state, training && rows >= 2)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}
