//! SGD with classical momentum: `v = mu*v + g; p -= lr*v`.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub struct Sgd<T: Element> {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid("sgd", format!("lr must be positive, got {}", lr)));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("sgd", format!("momentum must be in [0,1), got {}", momentum)));
        }
        Ok(Sgd { lr, momentum, velocity: Vec::new() })
    }

    /// In-place update of every parameter from its accumulated gradient.
    /// Parameters are matched to velocity buffers by position, so the caller
    /// must pass the same list in the same order every step.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::invalid(
                "sgd_step",
                format!("{} params but {} velocity buffers", params.len(), self.velocity.len()),
            ));
        }
        let mu = T::from_f64(self.momentum);
        let lr = T::from_f64(self.lr);
        for (p, v) in params.iter().zip(self.velocity.iter_mut()) {
            if !p.has_grad() {
                return Err(Error::invalid("sgd_step", "parameter has no accumulated gradient"));
            }
            let g = p.grad();
            if v.len() != g.len() {
                return Err(Error::shape("sgd_step", "parameter size changed between steps"));
            }
            let mut data = p.data_mut();
            for i in 0..g.len() {
                v[i] = mu * v[i] + g[i];
                data[i] -= lr * v[i];
            }
        }
        Ok(())
    }
}
