//! Linear and Gaussian (RBF) kernels and dense Gram matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("RBF width q must be positive and finite, got {0}")]
    InvalidWidth(f64),
}

/// How the RBF exponent uses the distance between points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RbfForm {
    /// `exp(-||x - y||^2 / (2 q^2))`, the usual Gaussian kernel.
    #[default]
    SquaredDistance,
    /// `exp(-||x - y|| / (2 q^2))`, with the plain Euclidean norm.
    UnsquaredDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Kernel {
    Linear,
    Rbf { q: f64, form: RbfForm },
}

impl Kernel {
    pub fn rbf(q: f64) -> Result<Self, KernelError> {
        Self::rbf_with_form(q, RbfForm::SquaredDistance)
    }

    pub fn rbf_with_form(q: f64, form: RbfForm) -> Result<Self, KernelError> {
        let kernel = Kernel::Rbf { q, form };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            Kernel::Linear => Ok(()),
            Kernel::Rbf { q, .. } if q > 0.0 && q.is_finite() => Ok(()),
            Kernel::Rbf { q, .. } => Err(KernelError::InvalidWidth(q)),
        }
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch { left: x.len(), right: y.len() });
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            Kernel::Rbf { q, form } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                let dist = match form {
                    RbfForm::SquaredDistance => sq,
                    RbfForm::UnsquaredDistance => sq.sqrt(),
                };
                (-dist / (2.0 * q * q)).exp()
            }
        }
    }

    /// Gram matrix of the rows of `x`. Only the upper triangle is computed;
    /// the lower triangle is a mirror, so the result is exactly symmetric.
    pub fn gram(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = row_major(x);
        let l = x.nrows();
        let mut g = DMatrix::zeros(l, l);
        for i in 0..l {
            for j in i..l {
                let v = self.eval_unchecked(&rows[i], &rows[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `K[i][j] = k(a_i, b_j)` for the rows of `a` and `b`.
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        if a.ncols() != b.ncols() {
            return Err(KernelError::DimensionMismatch { left: a.ncols(), right: b.ncols() });
        }
        let ra = row_major(a);
        let rb = row_major(b);
        Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval_unchecked(&ra[i], &rb[j])))
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Linear => write!(f, "linear"),
            Kernel::Rbf { q, form: RbfForm::SquaredDistance } => write!(f, "rbf(q={q})"),
            Kernel::Rbf { q, form: RbfForm::UnsquaredDistance } => write!(f, "rbf-unsquared(q={q})"),
        }
    }
}

/// Copies matrix rows into contiguous vectors.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}
