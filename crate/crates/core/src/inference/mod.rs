//! Posterior inference engines.
//!
//! Two routes lead to the same posterior summaries: a deterministic
//! approximation (Laplace fits of the latent field nested inside an adaptive
//! grid over the hyperparameters) and a long-run adaptive MCMC sampler used
//! as a reference.  Both report [`PosteriorSummary`] so downstream consumers
//! never care which engine produced a fit.

mod grid;
mod laplace;
mod mcmc;

pub use grid::{
    explore_hyperposterior, marginals_from_grid, posterior_marginals, GridPoint, HyperGrid,
};
pub use laplace::{
    laplace_fit, laplace_fit_observations, latent_objective, latent_objective_dense,
    GaussianApprox,
};
pub use mcmc::{mcmc_oracle, McmcAcceptance, McmcConfig, McmcRun, McmcSamples};

use crate::error::{Error, Result};
use crate::math::trapezoid;
use serde::{Deserialize, Serialize};

/// Tuning knobs for the deterministic engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Lattice spacing in standardised hyperparameter coordinates.
    pub grid_step: f64,
    /// Log-density drop (relative to the mode) beyond which lattice points
    /// are discarded.
    pub log_weight_drop: f64,
    /// Central finite-difference step for hyper-gradient evaluations.
    pub fd_step: f64,
    /// Iteration budget for the hyperparameter mode search.
    pub max_mode_iterations: usize,
    /// Number of points in each reported marginal density grid.
    pub density_grid_points: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.75,
            log_weight_drop: 1000.0f64.ln(),
            fd_step: 1e-4,
            max_mode_iterations: 200,
            density_grid_points: 512,
        }
    }
}

/// Location and spread summaries of a univariate posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

/// A univariate posterior marginal: summary statistics plus the density
/// grid they were computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Marginal {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl Marginal {
    pub fn stats(&self) -> SummaryStats {
        SummaryStats {
            mean: self.mean,
            sd: self.sd,
            q025: self.q025,
            q500: self.q500,
            q975: self.q975,
        }
    }

    pub(crate) fn from_grid(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let stats = summarize(&grid, &density)?;
        Ok(Self {
            mean: stats.mean,
            sd: stats.sd,
            q025: stats.q025,
            q500: stats.q500,
            q975: stats.q975,
            grid,
            density,
        })
    }
}

/// Posterior summaries shared by every inference engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// Logit-sensitivity intercept.
    pub mu: Marginal,
    /// Logit-specificity intercept.
    pub nu: Marginal,
    /// Pooled sensitivity `invlogit(mu)`.
    pub se: Marginal,
    /// Pooled specificity `invlogit(nu)`.
    pub sp: Marginal,
    pub var_phi: Marginal,
    pub var_psi: Marginal,
    pub rho: Marginal,
    /// Posterior correlation between the two intercepts.
    pub mu_nu_correlation: f64,
    /// Log marginal likelihood (deterministic engine only).
    pub marginal_log_likelihood: Option<f64>,
    pub warnings: Vec<String>,
}

/// Transform a density grid through a strictly increasing map `y(x)`:
/// `f_y(y) = f_x(x) / (dy/dx)`.  Points the transform collapses together in
/// floating point are dropped so the result stays strictly ascending.
pub(crate) fn transform_density(
    grid: &[f64],
    density: &[f64],
    map: impl Fn(f64) -> f64,
    dy_dx: impl Fn(f64, f64) -> f64,
) -> Result<Marginal> {
    let mut tg = Vec::with_capacity(grid.len());
    let mut td = Vec::with_capacity(grid.len());
    for (x, d) in grid.iter().zip(density) {
        let y = map(*x);
        let j = dy_dx(*x, y);
        if !(y.is_finite() && j.is_finite() && j > 0.0) {
            continue;
        }
        if let Some(last) = tg.last() {
            if y <= *last {
                continue;
            }
        }
        tg.push(y);
        td.push(d / j);
    }
    Marginal::from_grid(tg, td)
}

/// Point-mass marginal used when a hyperparameter is held fixed.
pub(crate) fn point_mass_marginal(value: f64) -> Marginal {
    Marginal {
        mean: value,
        sd: 0.0,
        q025: value,
        q500: value,
        q975: value,
        grid: vec![value],
        density: Vec::new(),
    }
}

/// Compute mean, standard deviation and the 2.5/50/97.5% quantiles of a
/// density known on an ascending grid.
///
/// The density is renormalised by its trapezoid mass first, so callers may
/// pass unnormalised values.  Quantiles are solved exactly under the
/// piecewise-linear interpolant.
pub fn summarize(grid: &[f64], density: &[f64]) -> Result<SummaryStats> {
    if grid.len() != density.len() {
        return Err(Error::Domain(format!(
            "grid and density lengths differ ({} vs {})",
            grid.len(),
            density.len()
        )));
    }
    if grid.len() < 8 {
        return Err(Error::Domain(format!(
            "density grid needs at least 8 points, got {}",
            grid.len()
        )));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Domain("density grid must be strictly ascending".into()));
        }
    }
    if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Numerical(
            "density values must be finite and non-negative".into(),
        ));
    }
    let mass = trapezoid(grid, density);
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::Numerical(format!(
            "density mass {mass} is not positive"
        )));
    }

    let moments = |f: &dyn Fn(f64) -> f64| -> f64 {
        let vals: Vec<f64> = grid
            .iter()
            .zip(density)
            .map(|(x, d)| f(*x) * d)
            .collect();
        trapezoid(grid, &vals) / mass
    };
    let mean = moments(&|x| x);
    let ex2 = moments(&|x| x * x);
    let var = (ex2 - mean * mean).max(0.0);

    // Quantiles from the cumulative trapezoid, solving the quadratic piece.
    let quantile = |p: f64| -> f64 {
        let target = p * mass;
        let mut cum = 0.0;
        for i in 0..grid.len() - 1 {
            let dx = grid[i + 1] - grid[i];
            let seg = 0.5 * (density[i] + density[i + 1]) * dx;
            if cum + seg >= target || i == grid.len() - 2 {
                let a = 0.5 * (density[i + 1] - density[i]) / dx;
                let b = density[i];
                let c = cum - target;
                let t = if a.abs() * dx < 1e-12 * b.abs().max(1e-300) {
                    if b > 0.0 {
                        -c / b
                    } else {
                        0.5 * dx
                    }
                } else {
                    let disc = (b * b - 4.0 * a * c).max(0.0);
                    (-b + disc.sqrt()) / (2.0 * a)
                };
                return grid[i] + t.clamp(0.0, dx);
            }
            cum += seg;
        }
        *grid.last().unwrap()
    };
    let q025 = quantile(0.025);
    let q500 = quantile(0.5);
    let q975 = quantile(0.975);

    Ok(SummaryStats {
        mean,
        sd: var.sqrt(),
        q025,
        q500,
        q975,
    })
}
