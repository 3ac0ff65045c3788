//! Adam optimizer over a fixed, ordered list of parameters.

use super::{DenseMatrix, NnError, Param};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment slots aligned by position with the parameter list the
/// state was created for.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)], hyper: AdamHyper) -> Self {
        let m = shapes
            .iter()
            .map(|&(r, c)| DenseMatrix::zeros(r, c))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            m,
            v,
            step: 0,
            hyper,
        }
    }

    pub fn for_params(params: &[&Param], hyper: AdamHyper) -> Self {
        let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.value.shape()).collect();
        Self::new(&shapes, hyper)
    }

    pub fn from_parts(
        m: Vec<DenseMatrix>,
        v: Vec<DenseMatrix>,
        step: u64,
        hyper: AdamHyper,
    ) -> Self {
        assert_eq!(m.len(), v.len(), "moment slot counts differ");
        AdamState { m, v, step, hyper }
    }

    pub fn moments(&self) -> (&[DenseMatrix], &[DenseMatrix]) {
        (&self.m, &self.v)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.hyper.lr = lr;
    }

    /// One Adam update with bias correction. Parameters must arrive in the
    /// same order as at state creation. Gradients are zeroed after the step.
    /// A non-finite gradient aborts before touching any value.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::OptimizerMismatch {
                state: self.m.len(),
                params: params.len(),
            });
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.value.shape() != m.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "parameter `{}` is {:?} but state slot is {:?}",
                        p.name,
                        p.value.shape(),
                        m.shape()
                    ),
                });
            }
            if !p.grad.is_finite() {
                return Err(NnError::NonFiniteGrad(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let grads = p.grad.data_mut();
            let values = p.value.data_mut();
            for k in 0..values.len() {
                let g = grads[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !p.value.is_finite() {
                return Err(NnError::NonFiniteValue(p.name.clone()));
            }
            grads.fill(0.0);
        }
        Ok(())
    }
}
