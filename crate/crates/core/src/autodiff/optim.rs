use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::param::ParamStore;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v := m·v + grad; w := w − alpha·v`. With `m = 0` this is the plain
/// update `w := w − alpha·grad`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    alpha: f64,
    momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(alpha: f64, momentum: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::config(format!("learning rate must be > 0, got {alpha}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            alpha,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore<T>) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
        }
        let alpha = T::of(self.alpha);
        let m = T::of(self.momentum);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let (w, g) = (p.tensor.data_mut(), p.grad.data());
            if self.momentum == 0.0 {
                for (wi, &gi) in w.iter_mut().zip(g) {
                    *wi -= alpha * gi;
                }
            } else {
                for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = m * *vi + gi;
                    *wi -= alpha * *vi;
                }
            }
        }
    }
}

/// One optimizer step over `params` with a fresh optimizer state.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, alpha: f64, momentum: f64) -> Result<()> {
    Sgd::new(alpha, momentum)?.step(params);
    Ok(())
}
