use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Real};
use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8, bias-corrected) or plain SGD.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. Nothing is modified if any gradient entry is
    /// non-finite or shapes disagree.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() {
            return Err(Error::dims("optimizer_step", params.len(), grads.len()));
        }
        for ((name, p), (_, g)) in params.iter().zip(&grads) {
            if p.shape() != g.shape() {
                return Err(Error::dims(
                    "optimizer_step",
                    format!("{:?}", p.shape()),
                    format!("{name} {:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::of(-self.lr);
                for ((_, p), (_, g)) in params.iter_mut().zip(&grads) {
                    for (w, &d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *w += lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != grads.len() {
                    self.m = grads.iter().map(|(_, g)| Matrix::zeros(g.rows(), g.cols())).collect();
                    self.v = self.m.clone();
                }
                let t = self.t as i32;
                let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
                let c1 = T::of(1.0 - self.beta1.powi(t));
                let c2 = T::of(1.0 - self.beta2.powi(t));
                let (lr, eps) = (T::of(self.lr), T::of(self.eps));
                for (((_, p), (_, g)), (m, v)) in params.iter_mut().zip(&grads).zip(self.m.iter_mut().zip(&mut self.v))
                {
                    let (p, g) = (p.as_mut_slice(), g.as_slice());
                    let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
                    for k in 0..p.len() {
                        m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                        v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                        let mhat = m[k] / c1;
                        let vhat = v[k] / c2;
                        p[k] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
