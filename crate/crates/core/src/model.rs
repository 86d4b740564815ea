//! The bivariate logit random-effects model.
//!
//! Each study contributes two binomial observations: true positives among the
//! diseased and true negatives among the healthy.  Their logit-scale success
//! probabilities are `mu + U alpha + phi_i` and `nu + V beta + psi_i`, where
//! `(phi_i, psi_i)` is a bivariate Gaussian random effect with covariance
//! built from the two variances and the between-study correlation.  Fixed
//! effects carry independent zero-mean Gaussian priors.
//!
//! Hyperparameters live on two scales: the natural one (variances,
//! correlation) and an unconstrained internal one (log-variances,
//! `z = log((1+rho)/(1-rho))`) used by both inference engines; prior
//! densities on the internal scale include the Jacobians.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{log1p_exp, ln_choose, normal_log_pdf, LN_TWO_PI};
use crate::priors::{CorrelationPrior, VariancePrior};
use nalgebra::Matrix2;
use serde::Serialize;

/// Between-study covariance parameters on the natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hyperparameters {
    /// Variance of the sensitivity random effect.
    pub var_phi: f64,
    /// Variance of the specificity random effect.
    pub var_psi: f64,
    /// Correlation between the two effects.
    pub rho: f64,
}

impl Hyperparameters {
    pub fn new(var_phi: f64, var_psi: f64, rho: f64) -> Result<Self> {
        if !(var_phi.is_finite() && var_phi > 0.0 && var_psi.is_finite() && var_psi > 0.0) {
            return Err(Error::Domain(format!(
                "variances must be positive, got ({var_phi}, {var_psi})"
            )));
        }
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(Error::Domain(format!(
                "correlation must lie in (-1, 1), got {rho}"
            )));
        }
        Ok(Hyperparameters {
            var_phi,
            var_psi,
            rho,
        })
    }

    /// Map to the unconstrained internal scale
    /// `[ln var_phi, ln var_psi, log((1+rho)/(1-rho))]`.
    pub fn to_internal(&self) -> [f64; 3] {
        [
            self.var_phi.ln(),
            self.var_psi.ln(),
            ((1.0 + self.rho) / (1.0 - self.rho)).ln(),
        ]
    }

    /// Inverse of [`Hyperparameters::to_internal`].
    pub fn from_internal(t: &[f64; 3]) -> Self {
        Hyperparameters {
            var_phi: t[0].exp(),
            var_psi: t[1].exp(),
            rho: (0.5 * t[2]).tanh(),
        }
    }

    /// Random-effect covariance matrix.
    pub fn covariance(&self) -> Matrix2<f64> {
        let c = self.rho * (self.var_phi * self.var_psi).sqrt();
        Matrix2::new(self.var_phi, c, c, self.var_psi)
    }

    /// Random-effect precision matrix and `ln det` of the covariance.
    pub fn pair_precision(&self) -> (Matrix2<f64>, f64) {
        let s = (1.0 - self.rho) * (1.0 + self.rho);
        let off = -self.rho / ((self.var_phi * self.var_psi).sqrt() * s);
        let prec = Matrix2::new(1.0 / (self.var_phi * s), off, off, 1.0 / (self.var_psi * s));
        let log_det_cov = self.var_phi.ln() + self.var_psi.ln() + s.ln();
        (prec, log_det_cov)
    }
}

/// Index layout of the latent vector:
/// `[mu, nu, alpha.., beta.., (phi_0, psi_0), (phi_1, psi_1), ...]`.
///
/// Interleaving each study's random-effect pair keeps the conditional
/// precision matrix in arrow form: a dense block for the fixed effects plus
/// independent 2x2 diagonal blocks, one per study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatentLayout {
    pub n_studies: usize,
    pub p_se: usize,
    pub p_sp: usize,
}

impl LatentLayout {
    pub fn of(dataset: &Dataset) -> Self {
        LatentLayout {
            n_studies: dataset.len(),
            p_se: dataset.se_covariate_names.len(),
            p_sp: dataset.sp_covariate_names.len(),
        }
    }

    /// Number of fixed-effect coordinates (intercepts plus coefficients).
    pub fn fixed_dim(&self) -> usize {
        2 + self.p_se + self.p_sp
    }

    /// Total latent dimension.
    pub fn dim(&self) -> usize {
        self.fixed_dim() + 2 * self.n_studies
    }

    pub fn idx_mu(&self) -> usize {
        0
    }
    pub fn idx_nu(&self) -> usize {
        1
    }
    pub fn idx_alpha(&self, j: usize) -> usize {
        2 + j
    }
    pub fn idx_beta(&self, j: usize) -> usize {
        2 + self.p_se + j
    }
    pub fn idx_phi(&self, i: usize) -> usize {
        self.fixed_dim() + 2 * i
    }
    pub fn idx_psi(&self, i: usize) -> usize {
        self.fixed_dim() + 2 * i + 1
    }
}

/// The latent Gaussian field in structured form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentField {
    pub mu: f64,
    pub nu: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl LatentField {
    pub fn zero(layout: &LatentLayout) -> Self {
        LatentField {
            mu: 0.0,
            nu: 0.0,
            alpha: vec![0.0; layout.p_se],
            beta: vec![0.0; layout.p_sp],
            phi: vec![0.0; layout.n_studies],
            psi: vec![0.0; layout.n_studies],
        }
    }

    /// Flatten in the order fixed by [`LatentLayout`].
    pub fn to_vector(&self, layout: &LatentLayout) -> Vec<f64> {
        let mut x = Vec::with_capacity(layout.dim());
        x.push(self.mu);
        x.push(self.nu);
        x.extend_from_slice(&self.alpha);
        x.extend_from_slice(&self.beta);
        for i in 0..layout.n_studies {
            x.push(self.phi[i]);
            x.push(self.psi[i]);
        }
        x
    }

    /// Inverse of [`LatentField::to_vector`].
    pub fn from_vector(layout: &LatentLayout, x: &[f64]) -> Self {
        debug_assert_eq!(x.len(), layout.dim());
        LatentField {
            mu: x[layout.idx_mu()],
            nu: x[layout.idx_nu()],
            alpha: (0..layout.p_se).map(|j| x[layout.idx_alpha(j)]).collect(),
            beta: (0..layout.p_sp).map(|j| x[layout.idx_beta(j)]).collect(),
            phi: (0..layout.n_studies).map(|i| x[layout.idx_phi(i)]).collect(),
            psi: (0..layout.n_studies).map(|i| x[layout.idx_psi(i)]).collect(),
        }
    }
}

/// The two observation channels of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Se,
    Sp,
}

/// Observations attached to the two linear predictors of each study.
///
/// Abstracting the observation density lets the Laplace machinery run on
/// Gaussian pseudo-observations, where the evidence is available in closed
/// form and serves as an exact cross-check of the approximation.
pub trait ObservationModel {
    fn n_studies(&self) -> usize;

    /// Covariate rows (sensitivity, specificity) of a study.
    fn covariates(&self, study: usize) -> (&[f64], &[f64]);

    /// Log-density and its first two derivatives in the linear predictor.
    fn logpdf_d012(&self, study: usize, channel: Channel, eta: f64) -> (f64, f64, f64);

    /// Third derivative of the log-density in the linear predictor.
    ///
    /// Drives the skewness correction of the latent marginal means; the
    /// default of zero is exact for Gaussian observations and simply turns
    /// the correction off for models that do not provide it.
    fn logpdf_d3(&self, _study: usize, _channel: Channel, _eta: f64) -> f64 {
        0.0
    }
}

impl ObservationModel for Dataset {
    fn n_studies(&self) -> usize {
        self.len()
    }

    fn covariates(&self, study: usize) -> (&[f64], &[f64]) {
        let s = &self.studies[study];
        (&s.se_covariates, &s.sp_covariates)
    }

    fn logpdf_d012(&self, study: usize, channel: Channel, eta: f64) -> (f64, f64, f64) {
        let s = &self.studies[study];
        let (k, n) = match channel {
            Channel::Se => (s.true_pos, s.n_diseased()),
            Channel::Sp => (s.true_neg, s.n_healthy()),
        };
        let (kf, nf) = (k as f64, n as f64);
        let p = crate::math::invlogit(eta);
        let logpdf = ln_choose(n, k) + kf * eta - nf * log1p_exp(eta);
        (logpdf, kf - nf * p, -nf * p * (1.0 - p))
    }

    fn logpdf_d3(&self, study: usize, channel: Channel, eta: f64) -> f64 {
        let s = &self.studies[study];
        let n = match channel {
            Channel::Se => s.n_diseased(),
            Channel::Sp => s.n_healthy(),
        } as f64;
        let p = crate::math::invlogit(eta);
        -n * p * (1.0 - p) * (1.0 - 2.0 * p)
    }
}

/// Gaussian observations on the linear predictors, used to validate the
/// Laplace approximation against the conjugate closed form.
#[derive(Debug, Clone)]
pub struct GaussianPseudoObservations {
    /// Observed value per study on the sensitivity predictor.
    pub se: Vec<f64>,
    /// Observed value per study on the specificity predictor.
    pub sp: Vec<f64>,
    /// Common observation standard deviation.
    pub sd: f64,
}

impl ObservationModel for GaussianPseudoObservations {
    fn n_studies(&self) -> usize {
        self.se.len()
    }

    fn covariates(&self, _study: usize) -> (&[f64], &[f64]) {
        (&[], &[])
    }

    fn logpdf_d012(&self, study: usize, channel: Channel, eta: f64) -> (f64, f64, f64) {
        let y = match channel {
            Channel::Se => self.se[study],
            Channel::Sp => self.sp[study],
        };
        let var = self.sd * self.sd;
        (
            normal_log_pdf(y, eta, var),
            (y - eta) / var,
            -1.0 / var,
        )
    }
}

/// Linear predictors of one study.
pub fn linear_predictors<M: ObservationModel + ?Sized>(
    obs: &M,
    field: &LatentField,
    study: usize,
) -> (f64, f64) {
    let (xs, xp) = obs.covariates(study);
    let mut eta_se = field.mu + field.phi[study];
    for (a, x) in field.alpha.iter().zip(xs) {
        eta_se += a * x;
    }
    let mut eta_sp = field.nu + field.psi[study];
    for (b, x) in field.beta.iter().zip(xp) {
        eta_sp += b * x;
    }
    (eta_se, eta_sp)
}

/// Log-likelihood of the latent field (binomial constants included).
pub fn log_likelihood<M: ObservationModel + ?Sized>(obs: &M, field: &LatentField) -> f64 {
    let mut acc = 0.0;
    for i in 0..obs.n_studies() {
        let (eta_se, eta_sp) = linear_predictors(obs, field, i);
        acc += obs.logpdf_d012(i, Channel::Se, eta_se).0;
        acc += obs.logpdf_d012(i, Channel::Sp, eta_sp).0;
    }
    acc
}

/// Log-density of the latent Gaussian prior: independent `N(0, V)` on every
/// fixed effect plus the bivariate random-effect pairs.
pub fn log_latent_prior(
    field: &LatentField,
    hyper: &Hyperparameters,
    intercept_variance: f64,
) -> f64 {
    let (prec, log_det_cov) = hyper.pair_precision();
    let mut acc = 0.0;
    for x in [field.mu, field.nu]
        .iter()
        .chain(field.alpha.iter())
        .chain(field.beta.iter())
    {
        acc += normal_log_pdf(*x, 0.0, intercept_variance);
    }
    for (p, q) in field.phi.iter().zip(&field.psi) {
        let quad = prec[(0, 0)] * p * p + 2.0 * prec[(0, 1)] * p * q + prec[(1, 1)] * q * q;
        acc += -LN_TWO_PI - 0.5 * log_det_cov - 0.5 * quad;
    }
    acc
}

/// Priors for a full model fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorBundle {
    pub var_phi: VariancePrior,
    pub var_psi: VariancePrior,
    pub correlation: CorrelationPrior,
    /// Variance of the zero-mean Gaussian priors on intercepts and
    /// covariate coefficients.
    pub intercept_variance: f64,
}

impl Default for PriorBundle {
    fn default() -> Self {
        PriorBundle {
            var_phi: VariancePrior::default(),
            var_psi: VariancePrior::default(),
            correlation: CorrelationPrior::default(),
            intercept_variance: 100.0,
        }
    }
}

impl PriorBundle {
    /// Check the bundle is usable for a fit.
    pub fn validate(&self) -> Result<()> {
        if !(self.intercept_variance.is_finite() && self.intercept_variance > 0.0) {
            return Err(Error::InvalidPrior(format!(
                "intercept prior variance must be positive, got {}",
                self.intercept_variance
            )));
        }
        Ok(())
    }

    /// Log-density of the hyperprior on the internal scale, Jacobians
    /// included.  A pinned correlation contributes nothing.
    pub fn log_hyperprior_internal(&self, internal: &[f64; 3]) -> f64 {
        let mut acc = self.var_phi.log_density_log_scale(internal[0])
            + self.var_psi.log_density_log_scale(internal[1]);
        if self.correlation.fixed_value().is_none() {
            acc += self.correlation.log_density_z(internal[2]);
        }
        acc
    }
}

/// Joint log-density of data, latent field and hyperparameters, the target
/// density of the MCMC engine (hyperparameters on the internal scale).
pub fn log_joint(
    dataset: &Dataset,
    field: &LatentField,
    hyper: &Hyperparameters,
    priors: &PriorBundle,
) -> f64 {
    log_likelihood(dataset, field)
        + log_latent_prior(field, hyper, priors.intercept_variance)
        + priors.log_hyperprior_internal(&hyper.to_internal())
}
