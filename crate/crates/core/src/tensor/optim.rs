use super::{ParamId, ParamStore};
use crate::error::{invalid, AsifError, Result};
use crate::scalar::Scalar;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v <- momentum * v + grad`, `p <- p - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Result<Self> {
        if !(lr >= T::zero()) || !lr.is_finite() {
            return Err(invalid("lr", format!("{lr} must be finite and >= 0")));
        }
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(invalid("momentum", format!("{momentum} outside [0,1)")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self, id: ParamId) -> Option<&[T]> {
        self.velocity.get(id.0).and_then(|v| v.as_deref())
    }

    pub(crate) fn velocities(&self) -> &[Option<Vec<T>>] {
        &self.velocity
    }

    pub(crate) fn set_velocities(&mut self, v: Vec<Option<Vec<T>>>) {
        self.velocity = v;
    }

    /// Updates exactly `ids`; every one of them must carry a gradient.
    /// Gradients of the updated parameters are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore<T>, ids: &[ParamId]) -> Result<()> {
        if let Some(&missing) = ids.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(AsifError::MissingGradient(store.name(missing).to_string()));
        }
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for &id in ids {
            let t = store.get_mut(id);
            let grad = t.grad.take().expect("checked above");
            let v = self.velocity[id.0].get_or_insert_with(|| vec![T::zero(); grad.len()]);
            for ((p, vi), g) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = self.momentum * *vi + g;
                *p -= self.lr * *vi;
            }
        }
        Ok(())
    }

    /// Updates the parameters that received a gradient and skips the rest,
    /// leaving their momentum untouched.
    pub fn step_present(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let ids = store.with_grad();
        self.step(store, &ids)
    }
}
