//! Trainable parameter storage and the Adam update rule.

use ndarray::{Array, ArrayViewMutD, Dimension};

/// A trainable tensor with its gradient accumulator and Adam moments.
///
/// Keeping the optimizer moments inside the parameter makes checkpointing a
/// flat walk over named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<D: Dimension> {
    pub value: Array<f64, D>,
    pub grad: Array<f64, D>,
    pub m1: Array<f64, D>,
    pub m2: Array<f64, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f64, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        let m1 = Array::zeros(value.raw_dim());
        let m2 = Array::zeros(value.raw_dim());
        Self { value, grad, m1, m2 }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn count(&self) -> usize {
        self.value.len()
    }

    /// Named views over value and moments, for checkpoint save/load.
    pub fn state_views<'a>(&'a mut self, name: &str) -> Vec<(String, ArrayViewMutD<'a, f64>)> {
        vec![
            (name.to_string(), self.value.view_mut().into_dyn()),
            (format!("{name}.m1"), self.m1.view_mut().into_dyn()),
            (format!("{name}.m2"), self.m2.view_mut().into_dyn()),
        ]
    }
}

/// Adam with bias correction. One instance per network, matching the
/// per-network learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed update steps (drives bias correction).
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0 }
    }

    /// Advance the step counter; call once per optimization step, before
    /// updating this optimizer's parameters.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update<D: Dimension>(&self, p: &mut Param<D>) {
        debug_assert!(self.t > 0, "begin_step before update");
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((v, g), (m1, m2)) in p
            .value
            .iter_mut()
            .zip(p.grad.iter())
            .zip(p.m1.iter_mut().zip(p.m2.iter_mut()))
        {
            *m1 = self.beta1 * *m1 + (1.0 - self.beta1) * g;
            *m2 = self.beta2 * *m2 + (1.0 - self.beta2) * g * g;
            let mhat = *m1 / c1;
            let vhat = *m2 / c2;
            *v -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
