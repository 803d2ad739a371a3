//! First-order optimizers over a [`ParamSet`].

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// `acc ← ρ·acc + (1−ρ)·g²`, `p ← p − lr·g / (sqrt(acc) + ε)`.
    RmsProp { lr: f64, rho: f64, eps: f64 },
    /// Bias-corrected first and second moments.
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn rmsprop(lr: f64) -> Self {
        Self::RmsProp { lr, rho: 0.9, eps: 1e-7 }
    }

    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::RmsProp { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new: f64) -> Self {
        match &mut self {
            Self::RmsProp { lr, .. } | Self::Adam { lr, .. } => *lr = new,
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            kind,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Changes the learning rate; accumulated moments are kept.
    pub fn set_lr(&mut self, lr: f64) {
        self.kind = self.kind.with_lr(lr);
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// parameter or accumulator is touched.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<(), TensorError> {
        if grads.len() != params.len() {
            return Err(super::shape_err(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
            if g.len() != p.len() {
                return Err(super::shape_err(format!("gradient {i} has wrong size")));
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(i));
            }
        }
        self.steps += 1;
        let f = T::from_f64_lossy;
        match self.kind {
            OptimizerKind::RmsProp { lr, rho, eps } => {
                let (lr, rho, eps) = (f(lr), f(rho), f(eps));
                for ((p, g), acc) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.second) {
                    for ((pv, gv), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.iter_mut()) {
                        *a = rho * *a + (T::one() - rho) * *gv * *gv;
                        *pv -= lr * *gv / (a.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (lr, b1, b2, eps, c1, c2) = (f(lr), f(beta1), f(beta2), f(eps), f(c1), f(c2));
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = b1 * *mv + (T::one() - b1) * *gv;
                        *vv = b2 * *vv + (T::one() - b2) * *gv * *gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
