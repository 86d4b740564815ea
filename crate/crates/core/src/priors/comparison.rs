//! Reference priors used to benchmark the penalised complexity family.
//!
//! Two conventional choices: a Gaussian on the unbounded correlation scale
//! `z = log((1+rho)/(1-rho))` and an inverse-gamma on a variance.  Both are
//! widely used defaults in hierarchical models, which makes them the natural
//! yardsticks in the simulation study.

use crate::error::{Error, Result};
use crate::math::{normal_log_pdf, LN_TWO_PI};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

/// A benchmark prior: which parameter it applies to follows from its kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ComparisonPrior {
    /// Gaussian on `z = log((1+rho)/(1-rho))`; a correlation prior.
    NormalOnZ { mean: f64, variance: f64 },
    /// Inverse gamma on a variance component.
    InverseGamma { shape: f64, rate: f64 },
}

impl ComparisonPrior {
    /// The standard weakly-informative correlation prior `z ~ N(0, 5)`.
    pub fn standard_normal_z() -> Self {
        ComparisonPrior::NormalOnZ {
            mean: 0.0,
            variance: 5.0,
        }
    }

    /// The same Gaussian shifted so its median sits at `rho0`:
    /// `z ~ N(log((1+rho0)/(1-rho0)), 5)`.
    pub fn shifted_normal_z(rho0: f64) -> Result<Self> {
        if !(rho0.is_finite() && rho0 > -1.0 && rho0 < 1.0) {
            return Err(Error::Domain(format!(
                "shift must be a correlation in (-1, 1), got {rho0}"
            )));
        }
        Ok(ComparisonPrior::NormalOnZ {
            mean: ((1.0 + rho0) / (1.0 - rho0)).ln(),
            variance: 5.0,
        })
    }

    /// The conventional vague variance prior `InvGamma(0.25, 0.025)`.
    pub fn standard_inverse_gamma() -> Self {
        ComparisonPrior::InverseGamma {
            shape: 0.25,
            rate: 0.025,
        }
    }

    /// Validate parameter values.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ComparisonPrior::NormalOnZ { mean, variance } => {
                if !mean.is_finite() || !(variance.is_finite() && variance > 0.0) {
                    return Err(Error::InvalidPrior(format!(
                        "normal-z needs finite mean and positive variance, got ({mean}, {variance})"
                    )));
                }
            }
            ComparisonPrior::InverseGamma { shape, rate } => {
                if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
                    return Err(Error::InvalidPrior(format!(
                        "inverse gamma needs positive shape and rate, got ({shape}, {rate})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Density on the correlation scale (only for the `NormalOnZ` kind),
    /// including the Jacobian `dz/drho = 2 / (1 - rho^2)`.
    pub fn density_correlation(&self, rho: f64) -> Result<f64> {
        match *self {
            ComparisonPrior::NormalOnZ { mean, variance } => {
                if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
                    return Err(Error::Domain(format!(
                        "correlation must lie in (-1, 1), got {rho}"
                    )));
                }
                let s = (1.0 - rho) * (1.0 + rho);
                let z = ((1.0 + rho) / (1.0 - rho)).ln();
                Ok(normal_log_pdf(z, mean, variance).exp() * 2.0 / s)
            }
            ComparisonPrior::InverseGamma { .. } => Err(Error::Unsupported(
                "inverse gamma is a variance prior, not a correlation prior".into(),
            )),
        }
    }

    /// Density on the variance scale (only for the `InverseGamma` kind).
    pub fn density_variance(&self, v: f64) -> Result<f64> {
        match *self {
            ComparisonPrior::InverseGamma { .. } => {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Domain(format!(
                        "variance must be positive, got {v}"
                    )));
                }
                Ok(self.log_density_log_variance(v.ln()).exp() / v)
            }
            ComparisonPrior::NormalOnZ { .. } => Err(Error::Unsupported(
                "normal-z is a correlation prior, not a variance prior".into(),
            )),
        }
    }

    /// Log-density on `z` (Jacobian-free form for the `NormalOnZ` kind).
    pub fn log_density_z(&self, z: f64) -> f64 {
        match *self {
            ComparisonPrior::NormalOnZ { mean, variance } => normal_log_pdf(z, mean, variance),
            ComparisonPrior::InverseGamma { .. } => f64::NEG_INFINITY,
        }
    }

    /// Log-density on `ell = ln v` with Jacobian, for the `InverseGamma`
    /// kind: `shape ln(rate) - ln Gamma(shape) - shape ell - rate e^{-ell}`.
    pub fn log_density_log_variance(&self, ell: f64) -> f64 {
        match *self {
            ComparisonPrior::InverseGamma { shape, rate } => {
                shape * rate.ln() - ln_gamma(shape) - shape * ell - rate * (-ell).exp()
            }
            ComparisonPrior::NormalOnZ { .. } => f64::NEG_INFINITY,
        }
    }
}

/// Log-density of the Gaussian-on-z prior evaluated directly on z, exposed
/// for the inference engines (avoids constructing the enum repeatedly).
pub fn normal_z_log_density(z: f64, mean: f64, variance: f64) -> f64 {
    let d = z - mean;
    -0.5 * (variance.ln() + d * d / variance + LN_TWO_PI)
}
