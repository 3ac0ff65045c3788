//! Minimal dense numerical core: row-major f64 matrices, named trainable
//! parameters with gradient slots, elementwise activations, inverted dropout,
//! Adam, a seeded RNG stream, and a finite-difference gradient checker.
//!
//! Everything here is deterministic: the same seed and call sequence produce
//! bit-identical results on a given platform.

mod adam;
mod gradcheck;
mod ops;
mod rng;

pub use adam::{AdamHyper, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use ops::{dropout, dropout_mask, l2_normalize, l2_normalize_with_norm, relu, sigmoid, L2_EPS};
pub use rng::{RngState, RngStream};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("dropout probability must lie in [0,1), got {0}")]
    InvalidDropout(f64),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("non-finite value in parameter `{0}` after update")]
    NonFiniteValue(String),
    #[error("optimizer state holds {state} slots but {params} parameters were given")]
    OptimizerMismatch { state: usize, params: usize },
}

/// Training/inference switch. Dropout is active only in `Train` mode; `Eval`
/// mode draws nothing from the RNG stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch {
                op: "from_vec",
                detail: format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = self * x. Panics on shape mismatch; use `linear` for a checked call.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            x.len(),
            self.cols,
            "matvec: input length {} vs {} columns",
            x.len(),
            self.cols
        );
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        y
    }

    /// y = self^T * g, the adjoint of `matvec`.
    pub fn matvec_transpose(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(
            g.len(),
            self.rows,
            "matvec_transpose: input length {} vs {} rows",
            g.len(),
            self.rows
        );
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (yc, a) in y.iter_mut().zip(row) {
                *yc += gr * a;
            }
        }
        y
    }

    /// self += g * x^T (outer product accumulation for weight gradients).
    pub fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        assert_eq!(
            g.len(),
            self.rows,
            "add_outer: {} vs {} rows",
            g.len(),
            self.rows
        );
        assert_eq!(
            x.len(),
            self.cols,
            "add_outer: {} vs {} cols",
            x.len(),
            self.cols
        );
        for r in 0..self.rows {
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for (rc, xc) in row.iter_mut().zip(x) {
                *rc += gr * xc;
            }
        }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Checked matrix-vector product W * x.
pub fn linear(w: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() != w.cols() {
        return Err(NnError::ShapeMismatch {
            op: "linear",
            detail: format!(
                "input length {} vs matrix {}x{}",
                x.len(),
                w.rows(),
                w.cols()
            ),
        });
    }
    Ok(w.matvec(x))
}

/// A named trainable tensor with a gradient slot of the same shape.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
