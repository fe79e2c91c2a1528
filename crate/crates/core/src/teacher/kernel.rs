//! Squared-exponential (RBF) kernel with log-space hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `variance · exp(-½ Σ_d (x_d - y_d)² / ℓ_d²)`; a single lengthscale is
/// shared by every dimension, otherwise one per dimension (ARD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub log_variance: f64,
    pub log_lengthscales: Vec<f64>,
}

impl RbfKernel {
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self> {
        Self::ard(variance, vec![lengthscale])
    }

    pub fn ard(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0) || lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::param("kernel variance and lengthscales must be > 0"));
        }
        Ok(Self {
            log_variance: variance.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        })
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn is_ard(&self) -> bool {
        self.log_lengthscales.len() > 1
    }

    pub fn lengthscale(&self, d: usize) -> f64 {
        self.log_lengthscales[if self.is_ard() { d } else { 0 }].exp()
    }

    /// Inverse squared lengthscale per input dimension.
    pub(crate) fn inv_sq(&self, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|d| (-2.0 * self.log_lengthscales[if self.is_ard() { d } else { 0 }]).exp())
            .collect()
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.is_ard() && self.log_lengthscales.len() != dim {
            return Err(Error::param(format!(
                "ARD kernel has {} lengthscales but inputs have {dim} dimensions",
                self.log_lengthscales.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        if x1.len() != x2.len() {
            return Err(Error::param(format!("dimension mismatch {} vs {}", x1.len(), x2.len())));
        }
        self.check_dim(x1.len())?;
        let w = self.inv_sq(x1.len());
        Ok(self.eval_scaled(x1, x2, &w))
    }

    pub(crate) fn eval_scaled(&self, x1: &[f64], x2: &[f64], inv_sq: &[f64]) -> f64 {
        let r2: f64 = x1
            .iter()
            .zip(x2)
            .zip(inv_sq)
            .map(|((a, b), w)| (a - b) * (a - b) * w)
            .sum();
        self.variance() * (-0.5 * r2).exp()
    }

    /// Cross-covariance between the rows of `a` and the rows of `b`.
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.inv_sq(a.ncols());
        let rows_a: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
        let rows_b: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            self.eval_scaled(&rows_a[i], &rows_b[j], &w)
        })
    }

    /// Number of trainable hyperparameters (log variance first).
    pub fn n_params(&self) -> usize {
        1 + self.log_lengthscales.len()
    }
}

/// Kernel value between two feature vectors.
pub fn rbf(x1: &[f64], x2: &[f64], kernel: &RbfKernel) -> Result<f64> {
    kernel.eval(x1, x2)
}
