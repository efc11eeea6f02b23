//! Diagonal-covariance Gaussians: entropy, negative log-likelihood, density
//! evaluation and sampling.

use super::linalg::Vector;
use super::rng::Rng;
use crate::error::{Error, Result};

pub const LOG_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Gaussian with diagonal covariance, stored as per-dimension variances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiag {
    pub mean: Vector,
    pub var: Vector,
}

impl GaussianDiag {
    /// Variances must be finite and strictly positive.
    pub fn new(mean: Vector, var: Vector) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                context: "GaussianDiag::new",
                expected: mean.len(),
                got: var.len(),
            });
        }
        for (i, &v) in var.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Numerical(format!(
                    "non-positive or non-finite variance {v} at dim {i}"
                )));
            }
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.var)
    }

    /// Negative log-likelihood of `target`.
    pub fn nll(&self, target: &Vector) -> f64 {
        gaussian_nll(&self.mean, &self.var, target)
    }

    /// Log-density at `x`.
    pub fn log_density(&self, x: &Vector) -> f64 {
        -self.nll(x)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vector {
        Vector::from_fn(self.dim(), |i, _| {
            self.mean[i] + self.var[i].sqrt() * rng.normal()
        })
    }

    /// Restriction to a contiguous dimension range.
    pub fn marginal(&self, dims: std::ops::Range<usize>) -> GaussianDiag {
        GaussianDiag {
            mean: Vector::from_iterator(dims.len(), dims.clone().map(|i| self.mean[i])),
            var: Vector::from_iterator(dims.len(), dims.map(|i| self.var[i])),
        }
    }
}

/// Entropy of a diagonal Gaussian: `0.5*sum(log var_i) + D/2*(1 + log 2*pi)`.
pub fn gaussian_entropy(var: &Vector) -> f64 {
    let d = var.len() as f64;
    0.5 * var.iter().map(|v| v.ln()).sum::<f64>() + 0.5 * d * (1.0 + LOG_2PI)
}

/// Negative log-likelihood of `target` under a diagonal Gaussian:
/// `sum_i 0.5*(log 2*pi + log var_i + (t_i - mu_i)^2 / var_i)`.
pub fn gaussian_nll(mean: &Vector, var: &Vector, target: &Vector) -> f64 {
    debug_assert_eq!(mean.len(), var.len());
    debug_assert_eq!(mean.len(), target.len());
    let mut acc = 0.0;
    for i in 0..mean.len() {
        let r = target[i] - mean[i];
        acc += 0.5 * (LOG_2PI + var[i].ln() + r * r / var[i]);
    }
    acc
}
