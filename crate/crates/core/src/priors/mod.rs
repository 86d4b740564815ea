//! Prior distributions for the hyperparameters.
//!
//! The penalised complexity family ([`CorrelationPcPrior`],
//! [`VariancePcPrior`]) is the default; conventional benchmarks
//! ([`ComparisonPrior`]) and a pinned correlation are available for
//! comparison runs.  [`parse`] turns compact specification strings like
//! `pc-cor(strategy=1, rho0=-0.2, omega1=0.4, umin=-0.95, alpha1=0.05)`
//! into prior values.

mod comparison;
mod correlation;
pub mod parse;
mod variance;

pub use comparison::ComparisonPrior;
pub use correlation::{
    distance_correlation, kld_correlation, solve_rates, CorrelationPcPrior, PcContrasts,
    PcStrategy, SolvedRates,
};
pub use parse::{parse_correlation_prior, parse_variance_prior};
pub use variance::VariancePcPrior;

use crate::error::{Error, Result};
use comparison::normal_z_log_density;
use serde::Serialize;

/// Prior on the between-study correlation, as used by the engines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CorrelationPrior {
    /// Penalised complexity prior.
    Pc(CorrelationPcPrior),
    /// Gaussian on `z = log((1+rho)/(1-rho))`.
    NormalOnZ { mean: f64, variance: f64 },
    /// Correlation pinned to a fixed value: the engines drop it from the
    /// hyperparameter space.
    Fixed { rho: f64 },
}

impl CorrelationPrior {
    /// Wrap a benchmark prior, rejecting kinds that are not correlation
    /// priors.
    pub fn from_comparison(prior: ComparisonPrior) -> Result<Self> {
        prior.validate()?;
        match prior {
            ComparisonPrior::NormalOnZ { mean, variance } => {
                Ok(CorrelationPrior::NormalOnZ { mean, variance })
            }
            ComparisonPrior::InverseGamma { .. } => Err(Error::InvalidPrior(
                "inverse gamma cannot serve as a correlation prior".into(),
            )),
        }
    }

    /// Build a pinned-correlation prior.
    pub fn fixed(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidPrior(format!(
                "fixed correlation must lie in (-1, 1), got {rho}"
            )));
        }
        Ok(CorrelationPrior::Fixed { rho })
    }

    /// The pinned value, when there is one.
    pub fn fixed_value(&self) -> Option<f64> {
        match *self {
            CorrelationPrior::Fixed { rho } => Some(rho),
            _ => None,
        }
    }

    /// Centre of the prior on the `z` scale, used to seed searches.
    pub fn centre_z(&self) -> f64 {
        match *self {
            CorrelationPrior::Pc(ref p) => ((1.0 + p.rho0) / (1.0 - p.rho0)).ln(),
            CorrelationPrior::NormalOnZ { mean, .. } => mean,
            CorrelationPrior::Fixed { rho } => ((1.0 + rho) / (1.0 - rho)).ln(),
        }
    }

    /// Log-density on the unbounded scale `z`, Jacobian included.  Must not
    /// be called for a pinned correlation.
    pub fn log_density_z(&self, z: f64) -> f64 {
        match *self {
            CorrelationPrior::Pc(ref p) => p.log_density_z(z),
            CorrelationPrior::NormalOnZ { mean, variance } => {
                normal_z_log_density(z, mean, variance)
            }
            CorrelationPrior::Fixed { .. } => {
                debug_assert!(false, "pinned correlation has no density");
                f64::NEG_INFINITY
            }
        }
    }

    /// Density on the correlation scale, for diagnostics and plots.
    pub fn density(&self, rho: f64) -> Result<f64> {
        match *self {
            CorrelationPrior::Pc(ref p) => p.density(rho),
            CorrelationPrior::NormalOnZ { mean, variance } => {
                ComparisonPrior::NormalOnZ { mean, variance }.density_correlation(rho)
            }
            CorrelationPrior::Fixed { .. } => Err(Error::Unsupported(
                "pinned correlation has no density".into(),
            )),
        }
    }
}

impl Default for CorrelationPrior {
    /// The weakly informative penalised complexity default.
    fn default() -> Self {
        CorrelationPrior::Pc(CorrelationPcPrior::pc1())
    }
}

/// Prior on a random-effect variance, as used by the engines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum VariancePrior {
    /// Penalised complexity prior (exponential on the standard deviation).
    Pc(VariancePcPrior),
    /// Inverse gamma benchmark.
    InverseGamma { shape: f64, rate: f64 },
}

impl VariancePrior {
    /// Wrap a benchmark prior, rejecting kinds that are not variance priors.
    pub fn from_comparison(prior: ComparisonPrior) -> Result<Self> {
        prior.validate()?;
        match prior {
            ComparisonPrior::InverseGamma { shape, rate } => {
                Ok(VariancePrior::InverseGamma { shape, rate })
            }
            ComparisonPrior::NormalOnZ { .. } => Err(Error::InvalidPrior(
                "normal-z cannot serve as a variance prior".into(),
            )),
        }
    }

    /// Log-density on the unbounded scale `ell = ln v`, Jacobian included.
    pub fn log_density_log_scale(&self, ell: f64) -> f64 {
        match *self {
            VariancePrior::Pc(ref p) => p.log_density_log_scale(ell),
            VariancePrior::InverseGamma { shape, rate } => {
                ComparisonPrior::InverseGamma { shape, rate }.log_density_log_variance(ell)
            }
        }
    }

    /// Density on the variance scale, for diagnostics and plots.
    pub fn density(&self, v: f64) -> Result<f64> {
        match *self {
            VariancePrior::Pc(ref p) => p.density(v),
            VariancePrior::InverseGamma { shape, rate } => {
                ComparisonPrior::InverseGamma { shape, rate }.density_variance(v)
            }
        }
    }
}

impl Default for VariancePrior {
    /// Penalised complexity with `P(sigma > 3) = 0.05`.
    fn default() -> Self {
        VariancePrior::Pc(VariancePcPrior::new(3.0, 0.05).expect("built-in prior is valid"))
    }
}
