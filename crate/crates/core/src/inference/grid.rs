//! Adaptive exploration of the hyperparameter posterior.
//!
//! The three hyperparameters live on an unconstrained internal scale
//! `(ln var_phi, ln var_psi, ln((1+rho)/(1-rho)))`.  For each value the
//! Laplace fit supplies `log p(y | theta)`; adding the hyperprior gives the
//! unnormalised log posterior `lp(theta)`.  The explorer
//!
//! 1. finds the mode of `lp` by BFGS with central finite-difference
//!    gradients,
//! 2. measures curvature with a finite-difference Hessian and standardises
//!    coordinates by its eigendecomposition,
//! 3. flood-fills an integer lattice (spacing [`InferenceConfig::grid_step`]
//!    in standardised units) outwards while `lp` stays within
//!    [`InferenceConfig::log_weight_drop`] of the mode.
//!
//! The retained points act as a Riemann sum: normalised weights give
//! posterior expectations, and the summed cell masses give the log marginal
//! likelihood.  Latent marginals are Gaussian mixtures over the grid, with
//! the mixture means taken at the skewness-corrected conditional means of
//! the Laplace fits.  Hyperparameter marginals interpolate the log
//! posterior linearly between lattice nodes, project the subdivided lattice
//! onto each internal coordinate, and blur only at the sub-cell scale, so
//! the result is a refined Riemann image of the lattice rather than a
//! kernel-widened one.

use super::{
    laplace::laplace_fit_observations, point_mass_marginal, transform_density, GaussianApprox,
    InferenceConfig, Marginal, PosteriorSummary,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{logsumexp, normal_log_pdf};
use crate::model::{Hyperparameters, LatentField, LatentLayout, PriorBundle};
use nalgebra::{DMatrix, DVector};
use std::collections::{HashSet, VecDeque};

/// Reject internal coordinates beyond this magnitude; the transformed
/// hyperparameters would degenerate numerically long before.
const MAX_INTERNAL: f64 = 35.0;
/// Gradient max-norm target for the hyperparameter mode search.
const MODE_GRADIENT_TOL: f64 = 1e-5;
/// Finite-difference step for the hyper Hessian (larger than the gradient
/// step: second differences amplify evaluation noise).
const HESSIAN_FD_STEP: f64 = 0.05;
/// Smallest admissible Hessian eigenvalue; flatter directions are clamped.
const MIN_EIGENVALUE: f64 = 1e-8;
/// Hard cap on lattice size to keep degenerate posteriors bounded.
const MAX_GRID_POINTS: usize = 20_000;
/// Sub-cell refinement factor for projecting the lattice onto each
/// hyperparameter coordinate.
const FINE_SUBDIVISION: usize = 8;
/// Numerical domain bound on the free correlation coordinate.  Towards
/// |z| = 15 the effect covariance is ill-conditioned enough that the latent
/// Newton solve becomes unreliable, so exploration would otherwise be cut
/// off wherever the solver happens to give up — a boundary that moves with
/// float noise.  A fixed bound (|rho| < 1 - 2e-6, negligible prior mass
/// beyond it) keeps the explored region deterministic.
const GRID_Z_BOUND: f64 = 14.0;

/// One retained lattice point of the hyperparameter posterior.
#[derive(Debug, Clone)]
pub struct GridPoint {
    /// Integer lattice coordinates in the standardised basis (the unused
    /// third entry is zero when the correlation is pinned).
    pub cell: [i32; 3],
    /// Internal-scale coordinates `(ln var_phi, ln var_psi, z)`.
    pub internal: [f64; 3],
    pub hyper: Hyperparameters,
    /// Unnormalised log posterior `log p(y | theta) + log p(theta)`.
    pub log_posterior: f64,
    /// Normalised weight across the grid.
    pub weight: f64,
    /// Laplace fit of the latent field at this point.
    pub approx: GaussianApprox,
}

/// The explored hyperparameter posterior.
#[derive(Debug, Clone)]
pub struct HyperGrid {
    pub points: Vec<GridPoint>,
    /// Continuous mode located by the search (internal scale).
    pub mode_internal: [f64; 3],
    pub mode: Hyperparameters,
    /// `lp` at the continuous mode.
    pub log_posterior_mode: f64,
    /// Riemann-sum estimate of `log p(y)`.
    pub log_marginal_likelihood: f64,
    /// Set when the correlation was held fixed (the lattice is then 2-D).
    pub pinned_rho: Option<f64>,
    /// Lattice dimension (2 with a pinned correlation, else 3).
    pub dim: usize,
    /// Columns are one-lattice-step displacements of the searched internal
    /// coordinates (`dim x dim`), scaled by the mode curvature.
    pub basis: DMatrix<f64>,
    /// Priors the grid was explored under.
    pub priors: PriorBundle,
    pub warnings: Vec<String>,
}

/// Maps lattice coordinates to hyperparameters and evaluates `lp`.
struct Evaluator<'a> {
    dataset: &'a Dataset,
    priors: &'a PriorBundle,
    layout: LatentLayout,
    /// `Some(z)` pins the correlation and drops it from the search space.
    pinned_z: Option<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(dataset: &'a Dataset, priors: &'a PriorBundle) -> Self {
        let pinned_z = priors
            .correlation
            .fixed_value()
            .map(|rho| ((1.0 + rho) / (1.0 - rho)).ln());
        Evaluator {
            dataset,
            priors,
            layout: LatentLayout::of(dataset),
            pinned_z,
        }
    }

    fn dim(&self) -> usize {
        if self.pinned_z.is_some() {
            2
        } else {
            3
        }
    }

    fn internal3(&self, t: &[f64]) -> [f64; 3] {
        match self.pinned_z {
            Some(z) => [t[0], t[1], z],
            None => [t[0], t[1], t[2]],
        }
    }

    /// Unnormalised log posterior of the hyperparameters, plus the Laplace
    /// fit that produced it.  Out-of-range coordinates are reported as
    /// errors so searches can treat them as minus infinity.
    fn lp(&self, t: &[f64], warm: Option<&LatentField>) -> Result<(f64, GaussianApprox)> {
        if t.iter().any(|v| !v.is_finite() || v.abs() > MAX_INTERNAL) {
            return Err(Error::Numerical(
                "hyperparameter coordinates out of range".into(),
            ));
        }
        let internal = self.internal3(t);
        let hyper = Hyperparameters::from_internal(&internal);
        let approx = laplace_fit_observations(
            self.dataset,
            &self.layout,
            &hyper,
            self.priors.intercept_variance,
            warm,
        )?;
        let value = approx.log_evidence + self.priors.log_hyperprior_internal(&internal);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "hyperparameter log posterior is non-finite at {internal:?}"
            )));
        }
        Ok((value, approx))
    }
}

/// Central finite-difference gradient of `lp`.
fn fd_gradient(
    ev: &Evaluator,
    t: &[f64],
    step: f64,
    warm: &LatentField,
) -> Result<DVector<f64>> {
    let dim = t.len();
    let mut g = DVector::zeros(dim);
    for j in 0..dim {
        let mut tp = t.to_vec();
        let mut tm = t.to_vec();
        tp[j] += step;
        tm[j] -= step;
        let (fp, _) = ev.lp(&tp, Some(warm))?;
        let (fm, _) = ev.lp(&tm, Some(warm))?;
        g[j] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}

/// BFGS ascent on `lp`.  Returns the mode, its value and the fit there.
fn find_mode(
    ev: &Evaluator,
    start: &[f64],
    config: &InferenceConfig,
) -> Result<(Vec<f64>, f64, GaussianApprox)> {
    let dim = start.len();
    let mut x = start.to_vec();
    let (mut fx, mut approx) = ev.lp(&x, None).map_err(|e| {
        Error::NonConvergence(format!(
            "hyperparameter posterior could not be evaluated at the starting point: {e}"
        ))
    })?;
    let mut g = fd_gradient(ev, &x, config.fd_step, &approx.mode)?;
    let mut h_inv = DMatrix::identity(dim, dim);

    for _ in 0..config.max_mode_iterations {
        if g.amax() < MODE_GRADIENT_TOL {
            return Ok((x, fx, approx));
        }
        let mut p = &h_inv * &g;
        if p.dot(&g) <= 0.0 {
            // Curvature estimate went bad; restart from steepest ascent.
            h_inv = DMatrix::identity(dim, dim);
            p = g.clone();
        }
        // Trust-style cap keeps evidence evaluations in sane territory.
        let norm = p.norm();
        if norm > 2.0 {
            p *= 2.0 / norm;
        }

        let mut step = 1.0;
        let slope = p.dot(&g);
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(p.iter()).map(|(xi, pi)| xi + step * pi).collect();
            match ev.lp(&trial, Some(&approx.mode)) {
                Ok((ft, at)) if ft >= fx + 1e-4 * step * slope => {
                    let g_new = fd_gradient(ev, &trial, config.fd_step, &at.mode)?;
                    let s = DVector::from_iterator(dim, trial.iter().zip(&x).map(|(a, b)| a - b));
                    let y = &g - &g_new; // gradient of -lp increases along s
                    let sy = s.dot(&y);
                    if sy > 1e-12 {
                        // Standard BFGS inverse update on the minimised -lp.
                        let hy = &h_inv * &y;
                        let yhy = y.dot(&hy);
                        let c1 = (sy + yhy) / (sy * sy);
                        h_inv += c1 * (&s * s.transpose());
                        let cross = (&hy * s.transpose() + &s * hy.transpose()) / sy;
                        h_inv -= cross;
                    }
                    x = trial;
                    fx = ft;
                    approx = at;
                    g = g_new;
                    moved = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !moved {
            // The quasi-Newton direction is exhausted.  That happens at a
            // smooth maximum when curvature estimates degrade, but also at a
            // genuine non-smooth one: the penalised complexity correlation
            // prior has a kink at its base value, and with weak data the
            // posterior mode can sit exactly on it, where gradients never
            // fall below tolerance.  Probe the coordinate directions
            // directly; if none improves, the point is the mode.
            let mut improved = false;
            'probe: for j in 0..dim {
                for sign in [1.0, -1.0] {
                    let mut step = 0.25;
                    for _ in 0..12 {
                        let mut trial = x.clone();
                        trial[j] += sign * step;
                        if let Ok((ft, at)) = ev.lp(&trial, Some(&approx.mode)) {
                            if ft > fx + 1e-10 {
                                x = trial;
                                fx = ft;
                                approx = at;
                                improved = true;
                                break 'probe;
                            }
                        }
                        step *= 0.5;
                    }
                }
            }
            if !improved {
                return Ok((x, fx, approx));
            }
            g = fd_gradient(ev, &x, config.fd_step, &approx.mode)?;
            h_inv = DMatrix::identity(dim, dim);
        }
    }
    Err(Error::NonConvergence(format!(
        "hyperparameter mode search did not converge in {} iterations",
        config.max_mode_iterations
    )))
}

/// Negative finite-difference Hessian of `lp` at the mode.
fn fd_neg_hessian(ev: &Evaluator, x: &[f64], f0: f64, warm: &LatentField) -> Result<DMatrix<f64>> {
    let dim = x.len();
    let h = HESSIAN_FD_STEP;
    let mut m = DMatrix::zeros(dim, dim);
    let eval = |t: &[f64]| -> Result<f64> { ev.lp(t, Some(warm)).map(|(v, _)| v) };
    for j in 0..dim {
        let mut tp = x.to_vec();
        let mut tm = x.to_vec();
        tp[j] += h;
        tm[j] -= h;
        m[(j, j)] = -(eval(&tp)? - 2.0 * f0 + eval(&tm)?) / (h * h);
        for k in (j + 1)..dim {
            let mut tpp = x.to_vec();
            let mut tpm = x.to_vec();
            let mut tmp = x.to_vec();
            let mut tmm = x.to_vec();
            tpp[j] += h;
            tpp[k] += h;
            tpm[j] += h;
            tpm[k] -= h;
            tmp[j] -= h;
            tmp[k] += h;
            tmm[j] -= h;
            tmm[k] -= h;
            let v = -(eval(&tpp)? - eval(&tpm)? - eval(&tmp)? + eval(&tmm)?) / (4.0 * h * h);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    Ok(m)
}

/// Explore the hyperparameter posterior of `dataset` under `priors`.
pub fn explore_hyperposterior(
    dataset: &Dataset,
    priors: &PriorBundle,
    config: &InferenceConfig,
) -> Result<HyperGrid> {
    priors.validate()?;
    let ev = Evaluator::new(dataset, priors);
    let dim = ev.dim();
    let mut warnings = Vec::new();

    // Start the search at unit variances and the prior's correlation centre.
    let mut start = vec![0.0; dim];
    if dim == 3 {
        start[2] = priors.correlation.centre_z();
    }
    let (mode, lp_mode, mode_approx) = find_mode(&ev, &start, config)?;

    // Standardise coordinates by the eigendecomposition of the curvature.
    let neg_hess = fd_neg_hessian(&ev, &mode, lp_mode, &mode_approx.mode)?;
    let eigen = nalgebra::SymmetricEigen::new(neg_hess);
    let mut log_det_h = 0.0;
    let mut scales = DVector::zeros(dim);
    for j in 0..dim {
        let mut ev_j = eigen.eigenvalues[j];
        if ev_j < MIN_EIGENVALUE {
            warnings.push(format!(
                "hyperparameter posterior is nearly flat along a direction \
                 (eigenvalue {ev_j:.3e}); grid spread truncated"
            ));
            ev_j = MIN_EIGENVALUE;
        }
        log_det_h += ev_j.ln();
        scales[j] = 1.0 / ev_j.sqrt();
    }
    // Columns of `basis` are unit lattice steps in internal coordinates.
    let mut basis = eigen.eigenvectors.clone();
    for j in 0..dim {
        let col = basis.column(j) * (scales[j] * config.grid_step);
        basis.set_column(j, &col);
    }

    // Flood-fill the standardised lattice from the mode outwards.
    let threshold = lp_mode - config.log_weight_drop;
    let z_bound = if dim == 3 {
        GRID_Z_BOUND.max(mode[2].abs() + 4.0)
    } else {
        f64::INFINITY
    };
    let mut seen: HashSet<Vec<i32>> = HashSet::new();
    let mut queue: VecDeque<(Vec<i32>, LatentField)> = VecDeque::new();
    let mut kept: Vec<(Vec<i32>, f64, GaussianApprox)> = Vec::new();
    let origin = vec![0i32; dim];
    seen.insert(origin.clone());
    queue.push_back((origin, mode_approx.mode.clone()));
    let mut truncated = false;

    while let Some((cell, warm)) = queue.pop_front() {
        let mut t = mode.clone();
        for j in 0..dim {
            for r in 0..dim {
                t[r] += cell[j] as f64 * basis[(r, j)];
            }
        }
        if dim == 3 && t[2].abs() > z_bound {
            continue;
        }
        let (value, approx) = match ev.lp(&t, Some(&warm)) {
            Ok(v) => v,
            Err(_) => continue, // outside the numerically usable region
        };
        if value < threshold {
            continue;
        }
        if kept.len() >= MAX_GRID_POINTS {
            truncated = true;
            break;
        }
        let warm_next = approx.mode.clone();
        kept.push((cell.clone(), value, approx));
        for j in 0..dim {
            for delta in [-1i32, 1] {
                let mut next = cell.clone();
                next[j] += delta;
                if seen.insert(next.clone()) {
                    queue.push_back((next, warm_next.clone()));
                }
            }
        }
    }
    if truncated {
        warnings.push(format!(
            "hyperparameter grid truncated at {MAX_GRID_POINTS} points"
        ));
    }
    if kept.len() < 7 {
        warnings.push(format!(
            "hyperparameter grid has only {} points; summaries may be coarse",
            kept.len()
        ));
    }

    // Weights and the Riemann-sum marginal likelihood.
    let lps: Vec<f64> = kept.iter().map(|(_, v, _)| *v).collect();
    let lse = logsumexp(&lps);
    let log_cell_volume = dim as f64 * config.grid_step.ln() - 0.5 * log_det_h;
    let log_marginal_likelihood = lse + log_cell_volume;

    let mut points: Vec<GridPoint> = Vec::with_capacity(kept.len());
    for (cell, value, approx) in kept {
        let mut t = mode.clone();
        let mut cell3 = [0i32; 3];
        for j in 0..dim {
            cell3[j] = cell[j];
            for r in 0..dim {
                t[r] += cell[j] as f64 * basis[(r, j)];
            }
        }
        let internal = ev.internal3(&t);
        points.push(GridPoint {
            cell: cell3,
            internal,
            hyper: Hyperparameters::from_internal(&internal),
            log_posterior: value,
            weight: (value - lse).exp(),
            approx,
        });
    }

    let mode_internal = ev.internal3(&mode);
    Ok(HyperGrid {
        points,
        mode_internal,
        mode: Hyperparameters::from_internal(&mode_internal),
        log_posterior_mode: lp_mode,
        log_marginal_likelihood,
        pinned_rho: priors.correlation.fixed_value(),
        dim,
        basis,
        priors: priors.clone(),
        warnings,
    })
}

/// Weighted mean and population variance of projected lattice coordinates.
#[cfg(test)]
fn weighted_moments(xs: &[f64], ws: &[f64]) -> (f64, f64) {
    let mean: f64 = xs.iter().zip(ws).map(|(x, w)| x * w).sum();
    let var: f64 = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum();
    (mean, var)
}

/// In-place Gaussian blur of a uniformly binned histogram.
fn gaussian_blur(values: &[f64], sigma_bins: f64) -> Vec<f64> {
    if sigma_bins <= 1e-9 {
        return values.to_vec();
    }
    let n = values.len();
    let radius = ((4.0 * sigma_bins).ceil() as usize).min(n.saturating_sub(1)).max(1);
    let mut kernel: Vec<f64> = (0..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma_bins).powi(2)).exp())
        .collect();
    let sum = kernel[0] + 2.0 * kernel[1..].iter().sum::<f64>();
    for k in kernel.iter_mut() {
        *k /= sum;
    }
    let mut out = vec![0.0; n];
    for (i, v) in values.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        out[i] += v * kernel[0];
        for (k, kv) in kernel.iter().enumerate().skip(1) {
            if i >= k {
                out[i - k] += v * kv;
            }
            if i + k < n {
                out[i + k] += v * kv;
            }
        }
    }
    out
}

/// Marginal `(grid, density)` of each searched internal coordinate.
///
/// The smooth part of the log posterior (`log_smooth`, typically the
/// Laplace evidence) is interpolated linearly between lattice nodes; the
/// remainder (`sharp`, typically the hyperprior, whose correlation part has
/// a kink) is evaluated exactly at every fine node, so non-smooth prior
/// features are not blurred across cells.  The lattice is subdivided
/// [`FINE_SUBDIVISION`] times per cell and the resulting point masses are
/// dropped onto a per-coordinate histogram with linear binning.  A Gaussian
/// blur at the sub-cell scale (far below the posterior spread) then removes
/// the projection comb.  Fine cells touching a corner outside the explored
/// region are skipped; by construction those corners sit below the
/// retention threshold, so the lost mass is bounded by the exploration
/// cut-off.  Densities are normalised to unit mass.
fn project_lattice_marginals(
    cells: &[[i32; 3]],
    log_smooth: &[f64],
    sharp: impl Fn(&[f64; 3]) -> f64,
    mode_internal: &[f64; 3],
    basis: &DMatrix<f64>,
    dim: usize,
    n_grid: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let fine = FINE_SUBDIVISION;
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for c in cells {
        for d in 0..dim {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let counts: Vec<usize> = (0..dim).map(|d| (hi[d] - lo[d]) as usize + 1).collect();
    let table_index = |off: &[usize]| -> usize {
        let mut i = 0;
        for d in 0..dim {
            i = i * counts[d] + off[d];
        }
        i
    };
    let lp_ref = log_smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut table = vec![f64::NEG_INFINITY; counts.iter().product()];
    for (c, lp) in cells.iter().zip(log_smooth) {
        let off: Vec<usize> = (0..dim).map(|d| (c[d] - lo[d]) as usize).collect();
        table[table_index(&off)] = lp - lp_ref;
    }

    // Histogram ranges follow from the box corners; the blur scale is the
    // root-mean-square sub-cell step of each coordinate.
    let mut sigma = vec![0.0; dim];
    let mut lo_r = vec![0.0; dim];
    let mut hi_r = vec![0.0; dim];
    for c in 0..dim {
        let mut base = mode_internal[c];
        let mut below = 0.0;
        let mut above = 0.0;
        let mut row_sq = 0.0;
        for d in 0..dim {
            let b = basis[(c, d)];
            row_sq += b * b;
            base += lo[d] as f64 * b;
            let extent = (hi[d] - lo[d]) as f64 * b;
            if extent < 0.0 {
                below += extent;
            } else {
                above += extent;
            }
        }
        sigma[c] = 0.5 * row_sq.sqrt() / fine as f64;
        lo_r[c] = base + below - 4.0 * sigma[c];
        hi_r[c] = base + above + 4.0 * sigma[c];
        if !(hi_r[c] > lo_r[c]) {
            return Err(Error::Numerical(
                "hyperparameter lattice is degenerate along a coordinate".into(),
            ));
        }
    }
    let bin_width: Vec<f64> = (0..dim)
        .map(|c| (hi_r[c] - lo_r[c]) / (n_grid - 1) as f64)
        .collect();
    let mut hist = vec![vec![0.0; n_grid]; dim];

    let fine_counts: Vec<usize> = counts.iter().map(|&n| (n - 1) * fine + 1).collect();
    let fine_total: usize = fine_counts.iter().product();
    let sharp_ref = sharp(mode_internal);
    for lin in 0..fine_total {
        let mut rem = lin;
        let mut fc = [0usize; 3];
        for d in (0..dim).rev() {
            fc[d] = rem % fine_counts[d];
            rem /= fine_counts[d];
        }
        // Base cell and fractional position within it.
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for d in 0..dim {
            cell[d] = fc[d] / fine;
            frac[d] = (fc[d] % fine) as f64 / fine as f64;
        }
        // Linear interpolation of the log posterior over the cell corners.
        let mut value = 0.0;
        let mut usable = true;
        for mask in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut off = [0usize; 3];
            for d in 0..dim {
                if mask & (1 << d) != 0 {
                    w *= frac[d];
                    off[d] = (cell[d] + 1).min(counts[d] - 1);
                } else {
                    w *= 1.0 - frac[d];
                    off[d] = cell[d];
                }
            }
            if w == 0.0 {
                continue;
            }
            let corner = table[table_index(&off[..dim])];
            if corner == f64::NEG_INFINITY {
                usable = false;
                break;
            }
            value += w * corner;
        }
        if !usable {
            continue;
        }
        let mut x3 = *mode_internal;
        for c in 0..dim {
            for d in 0..dim {
                x3[c] += (lo[d] as f64 + fc[d] as f64 / fine as f64) * basis[(c, d)];
            }
        }
        let mass = (value + sharp(&x3) - sharp_ref).exp();
        for (c, hist_c) in hist.iter_mut().enumerate() {
            let pos = (x3[c] - lo_r[c]) / bin_width[c];
            let i0 = pos.floor();
            let t = pos - i0;
            let i0 = i0 as isize;
            if i0 >= 0 && (i0 as usize) < n_grid {
                hist_c[i0 as usize] += mass * (1.0 - t);
            }
            if i0 + 1 >= 0 && ((i0 + 1) as usize) < n_grid {
                hist_c[(i0 + 1) as usize] += mass * t;
            }
        }
    }

    let mut out = Vec::with_capacity(dim);
    for c in 0..dim {
        let density = gaussian_blur(&hist[c], sigma[c] / bin_width[c]);
        let grid: Vec<f64> = (0..n_grid)
            .map(|i| lo_r[c] + i as f64 * bin_width[c])
            .collect();
        let mass: f64 =
            (density.iter().sum::<f64>() - 0.5 * (density[0] + density[n_grid - 1]))
                * bin_width[c];
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Numerical(
                "hyperparameter marginal projection collected no mass".into(),
            ));
        }
        let density: Vec<f64> = density.iter().map(|d| d / mass).collect();
        out.push((grid, density));
    }
    Ok(out)
}

/// Gaussian-mixture marginal of one fixed-effect coordinate, centred at the
/// skewness-corrected conditional means.
fn latent_marginal(grid_points: &[GridPoint], index: usize, n_grid: usize) -> Result<Marginal> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let comps: Vec<(f64, f64, f64)> = grid_points
        .iter()
        .map(|p| {
            let m = p.approx.fixed_mean[index] + p.approx.fixed_shift[index];
            let v = p.approx.fixed_cov[(index, index)];
            (p.weight, m, v)
        })
        .collect();
    for (_, m, v) in &comps {
        lo = lo.min(m - 6.0 * v.sqrt());
        hi = hi.max(m + 6.0 * v.sqrt());
    }
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
        .collect();
    let density: Vec<f64> = grid
        .iter()
        .map(|x| {
            comps
                .iter()
                .map(|(w, m, v)| w * normal_log_pdf(*x, *m, *v).exp())
                .sum()
        })
        .collect();
    Marginal::from_grid(grid, density)
}

/// Build posterior marginals and summaries from an explored grid.
pub fn marginals_from_grid(grid: &HyperGrid, config: &InferenceConfig) -> Result<PosteriorSummary> {
    if grid.points.is_empty() {
        return Err(Error::Numerical("hyperparameter grid is empty".into()));
    }
    let n_grid = config.density_grid_points.max(64);

    let mu = latent_marginal(&grid.points, 0, n_grid)?;
    let nu = latent_marginal(&grid.points, 1, n_grid)?;
    let se = transform_density(&mu.grid, &mu.density, crate::math::invlogit, |_, p| {
        (p * (1.0 - p)).max(1e-300)
    })?;
    let sp = transform_density(&nu.grid, &nu.density, crate::math::invlogit, |_, p| {
        (p * (1.0 - p)).max(1e-300)
    })?;

    let cells: Vec<[i32; 3]> = grid.points.iter().map(|p| p.cell).collect();
    let evidences: Vec<f64> = grid.points.iter().map(|p| p.approx.log_evidence).collect();
    let projected = project_lattice_marginals(
        &cells,
        &evidences,
        |x| grid.priors.log_hyperprior_internal(x),
        &grid.mode_internal,
        &grid.basis,
        grid.dim,
        n_grid,
    )?;
    let var_phi = transform_density(&projected[0].0, &projected[0].1, f64::exp, |_, v| v)?;
    let var_psi = transform_density(&projected[1].0, &projected[1].1, f64::exp, |_, v| v)?;
    let rho = match grid.pinned_rho {
        Some(r) => point_mass_marginal(r),
        None => transform_density(
            &projected[2].0,
            &projected[2].1,
            |z| (z / 2.0).tanh(),
            |_, r| (((1.0 - r) * (1.0 + r)) / 2.0).max(1e-300),
        )?,
    };

    // Mixture moments give the posterior correlation of the intercepts.
    let mut e_mu = 0.0;
    let mut e_nu = 0.0;
    let mut e_mu2 = 0.0;
    let mut e_nu2 = 0.0;
    let mut e_munu = 0.0;
    for p in &grid.points {
        let m0 = p.approx.fixed_mean[0] + p.approx.fixed_shift[0];
        let m1 = p.approx.fixed_mean[1] + p.approx.fixed_shift[1];
        e_mu += p.weight * m0;
        e_nu += p.weight * m1;
        e_mu2 += p.weight * (p.approx.fixed_cov[(0, 0)] + m0 * m0);
        e_nu2 += p.weight * (p.approx.fixed_cov[(1, 1)] + m1 * m1);
        e_munu += p.weight * (p.approx.fixed_cov[(0, 1)] + m0 * m1);
    }
    let cov = e_munu - e_mu * e_nu;
    let sdprod = ((e_mu2 - e_mu * e_mu).max(0.0) * (e_nu2 - e_nu * e_nu).max(0.0)).sqrt();
    let mu_nu_correlation = if sdprod > 0.0 { cov / sdprod } else { 0.0 };

    Ok(PosteriorSummary {
        mu,
        nu,
        se,
        sp,
        var_phi,
        var_psi,
        rho,
        mu_nu_correlation,
        marginal_log_likelihood: Some(grid.log_marginal_likelihood),
        warnings: grid.warnings.clone(),
    })
}

/// Convenience wrapper: explore the grid, then summarise it.
pub fn posterior_marginals(
    dataset: &Dataset,
    priors: &PriorBundle,
    config: &InferenceConfig,
) -> Result<PosteriorSummary> {
    let grid = explore_hyperposterior(dataset, priors, config)?;
    marginals_from_grid(&grid, config)
}
