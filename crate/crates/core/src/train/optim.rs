//! Step learning-rate schedule and momentum SGD.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// `base · factor^(−⌊t / decay_steps⌋)`.
pub fn learning_rate(base: f64, iteration: usize, decay_steps: usize, factor: f64) -> f64 {
    let k = (iteration / decay_steps.max(1)) as i32;
    base / factor.powi(k)
}

/// `v ← μ·v − η·g`, `θ ← θ + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    pub momentum: f64,
    pub velocity: Vec<Tensor>,
}

impl Momentum {
    pub fn new(store: &ParamStore, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.velocity.len() != store.len() {
            return Err(Error::Shape(format!(
                "{} gradients, {} velocities for {} parameters",
                grads.len(),
                self.velocity.len(),
                store.len()
            )));
        }
        for ((id, g), v) in store.ids().collect::<Vec<_>>().into_iter().zip(grads).zip(&mut self.velocity) {
            let p = store.get_mut(id);
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            for ((vi, gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vi = self.momentum * *vi - lr * gi;
                *pi += *vi;
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
