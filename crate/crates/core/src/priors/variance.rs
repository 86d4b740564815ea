//! Penalised complexity prior for a random-effect variance.
//!
//! Measured against the base model "no heterogeneity" (variance zero), the
//! distance scale for a Gaussian random-effect variance is the standard
//! deviation itself, so the prior is an exponential on the standard
//! deviation: `sigma ~ Exp(lambda)`.  The rate follows from one tail
//! contrast, `P(sigma > u) = a`, giving `lambda = -ln(a) / u`.  On the
//! variance scale this is a Weibull density with shape 1/2, unbounded (but
//! integrable) at zero and heavy in the right tail.

use crate::error::{Error, Result};
use serde::Serialize;

/// Exponential-on-the-standard-deviation prior for a variance component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariancePcPrior {
    /// Reference standard deviation in the identifying contrast.
    pub u: f64,
    /// Tail mass above it: `P(sigma > u) = a`.
    pub a: f64,
    /// Solved exponential rate on the standard-deviation scale.
    pub lambda: f64,
}

impl VariancePcPrior {
    /// Build from the tail contrast `P(sigma > u) = a`.
    pub fn new(u: f64, a: f64) -> Result<Self> {
        if !(u.is_finite() && u > 0.0) {
            return Err(Error::InvalidPrior(format!(
                "reference standard deviation must be positive, got {u}"
            )));
        }
        if !(a.is_finite() && a > 0.0 && a < 1.0) {
            return Err(Error::InvalidPrior(format!(
                "tail mass must lie in (0, 1), got {a}"
            )));
        }
        Ok(VariancePcPrior {
            u,
            a,
            lambda: -a.ln() / u,
        })
    }

    /// Density on the variance scale: `lambda e^{-lambda sqrt(v)} / (2 sqrt(v))`.
    pub fn density(&self, v: f64) -> Result<f64> {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!(
                "variance must be positive, got {v}"
            )));
        }
        let s = v.sqrt();
        Ok(self.lambda * (-self.lambda * s).exp() / (2.0 * s))
    }

    /// Log-density on the variance scale.
    pub fn log_density(&self, v: f64) -> Result<f64> {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!(
                "variance must be positive, got {v}"
            )));
        }
        let s = v.sqrt();
        Ok(self.lambda.ln() - self.lambda * s - (2.0 * s).ln())
    }

    /// Log-density on the unbounded scale `ell = ln v`, Jacobian included:
    /// `ln(lambda/2) + ell/2 - lambda e^{ell/2}`.
    pub fn log_density_log_scale(&self, ell: f64) -> f64 {
        (0.5 * self.lambda).ln() + 0.5 * ell - self.lambda * (0.5 * ell).exp()
    }

    /// Survival function of the standard deviation, `P(sigma > s)`.
    pub fn survival_sd(&self, s: f64) -> f64 {
        (-self.lambda * s).exp()
    }

    /// Marginal prior median of the variance, `(ln 2 / lambda)^2`.
    pub fn median_variance(&self) -> f64 {
        let m = std::f64::consts::LN_2 / self.lambda;
        m * m
    }
}
