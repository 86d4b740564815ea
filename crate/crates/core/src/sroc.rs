//! Summary ROC geometry for a fitted model.
//!
//! A covariate-free fit maps onto the familiar ROC picture: a summary
//! operating point at the posterior-mean intercepts, a summary line obtained
//! by regressing logit-sensitivity on logit-specificity through the posterior
//! means, a 95% credible region for the intercept pair and a 95% prediction
//! region for a new study's operating point.  Study-level operating points
//! (bubble sizes proportional to study size) complete the plot.
//!
//! The intercept posterior is a mixture of the per-grid-point Gaussian
//! approximations, visibly non-elliptical for small meta-analyses, so both
//! regions are highest-density contours traced numerically: draw from the
//! mixture, bin the draws into a smoothed two-dimensional histogram, pick the
//! density threshold whose super-level set holds the requested fraction of
//! draws, and walk the level set with marching squares.  The prediction
//! region applies the same machinery to draws with a fresh random-effect pair
//! added, hyperparameters resampled across the grid by weight.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{HyperGrid, PosteriorSummary};
use crate::math::{invlogit, logit, trapezoid};
use crate::model::Hyperparameters;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// Tuning for the Monte-Carlo contouring.
#[derive(Debug, Clone, Serialize)]
pub struct SrocConfig {
    /// Credible/prediction level of both regions.
    pub level: f64,
    /// Draws behind each contour.
    pub n_draws: usize,
    /// Bins per axis of the contouring histogram.
    pub bins: usize,
    pub seed: u64,
    /// Points on the summary curve.
    pub curve_points: usize,
}

impl Default for SrocConfig {
    fn default() -> Self {
        SrocConfig {
            level: 0.95,
            n_draws: 10_000,
            bins: 192,
            seed: 20_150_901,
            curve_points: 201,
        }
    }
}

/// One study's empirical operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyPoint {
    /// Empirical false-positive rate `FP / (FP + TN)`.
    pub fpr: f64,
    /// Empirical sensitivity `TP / (TP + FN)`.
    pub se: f64,
    /// Study size, for bubble scaling.
    pub n: u64,
}

/// Everything needed to draw the summary ROC plot.  All coordinates are ROC
/// coordinates `(1 - specificity, sensitivity)` inside the unit square; the
/// region polylines are closed (last vertex joins the first).
#[derive(Debug, Clone, Serialize)]
pub struct SrocGeometry {
    /// Operating point of the posterior-mean intercepts
    /// `(1 - logit⁻¹(E[nu]), logit⁻¹(E[mu]))`: the summary curve passes
    /// through it exactly.
    pub summary_point: (f64, f64),
    /// The summary curve, ordered by ascending logit-specificity.
    pub curve: Vec<(f64, f64)>,
    /// Highest-density credible region for the intercept pair.
    pub credible_region: Vec<(f64, f64)>,
    /// Highest-density prediction region for a new study's operating point.
    pub prediction_region: Vec<(f64, f64)>,
    pub study_points: Vec<StudyPoint>,
}

/// Plug-in posterior means driving the summary curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveInputs {
    pub mu_mean: f64,
    pub nu_mean: f64,
    pub rho_mean: f64,
    /// Posterior mean of the sensitivity random-effect standard deviation.
    pub sd_phi_mean: f64,
    /// Posterior mean of the specificity random-effect standard deviation.
    pub sd_psi_mean: f64,
}

impl CurveInputs {
    /// Extract the plug-in means from a fit summary.  Standard-deviation
    /// means are integrated from the variance marginals.
    pub fn from_summary(summary: &PosteriorSummary) -> Result<Self> {
        Ok(CurveInputs {
            mu_mean: summary.mu.mean,
            nu_mean: summary.nu.mean,
            rho_mean: summary.rho.mean,
            sd_phi_mean: density_mean_of(&summary.var_phi.grid, &summary.var_phi.density, f64::sqrt)?,
            sd_psi_mean: density_mean_of(&summary.var_psi.grid, &summary.var_psi.density, f64::sqrt)?,
        })
    }

    /// Slope of the summary regression of logit-sensitivity on
    /// logit-specificity.
    pub fn slope(&self) -> f64 {
        self.rho_mean * self.sd_phi_mean / self.sd_psi_mean
    }

    /// Height of the summary line at logit-specificity `x`.
    pub fn logit_se_at(&self, x: f64) -> f64 {
        self.mu_mean + self.slope() * (x - self.nu_mean)
    }
}

/// `E[f(X)]` for a density known on a grid (unnormalised densities allowed).
fn density_mean_of(grid: &[f64], density: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    if grid.len() < 2 || grid.len() != density.len() {
        return Err(Error::Domain(
            "variance marginal carries no density grid".into(),
        ));
    }
    let mass = trapezoid(grid, density);
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::Numerical("variance marginal has no mass".into()));
    }
    let vals: Vec<f64> = grid.iter().zip(density).map(|(x, d)| f(*x) * d).collect();
    Ok(trapezoid(grid, &vals) / mass)
}

/// The intercept posterior as a weighted mixture of bivariate Gaussians, one
/// per hyperparameter grid point.
#[derive(Debug, Clone)]
pub struct LatentMixture {
    pub components: Vec<MixtureComponent>,
}

#[derive(Debug, Clone, Copy)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Posterior mean of `(mu, nu)` at this grid point, skew correction
    /// included.
    pub mean: [f64; 2],
    /// Marginal covariance of `(mu, nu)`: `[var_mu, cov, var_nu]`.
    pub cov: [f64; 3],
    pub hyper: Hyperparameters,
}

impl MixtureComponent {
    /// Draw from this component's intercept Gaussian.
    fn draw_intercepts<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let [a, b, c] = self.cov;
        let l11 = a.max(0.0).sqrt();
        let (l21, l22) = if l11 > 0.0 {
            let l21 = b / l11;
            (l21, (c - l21 * l21).max(0.0).sqrt())
        } else {
            (0.0, c.max(0.0).sqrt())
        };
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        (
            self.mean[0] + l11 * z1,
            self.mean[1] + l21 * z1 + l22 * z2,
        )
    }

    /// Draw a fresh random-effect pair under this component's
    /// hyperparameters.
    fn draw_effects<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let rho = self.hyper.rho;
        let phi = self.hyper.var_phi.sqrt() * z1;
        let psi = self.hyper.var_psi.sqrt() * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        (phi, psi)
    }
}

impl LatentMixture {
    /// Build the mixture from an explored grid.
    pub fn from_grid(grid: &HyperGrid) -> Result<Self> {
        if grid.points.is_empty() {
            return Err(Error::Numerical("hyperparameter grid is empty".into()));
        }
        let total: f64 = grid.points.iter().map(|p| p.weight).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Numerical("grid weights do not sum to a positive mass".into()));
        }
        let components = grid
            .points
            .iter()
            .map(|p| MixtureComponent {
                weight: p.weight / total,
                mean: [
                    p.approx.fixed_mean[0] + p.approx.fixed_shift[0],
                    p.approx.fixed_mean[1] + p.approx.fixed_shift[1],
                ],
                cov: [
                    p.approx.fixed_cov[(0, 0)],
                    p.approx.fixed_cov[(0, 1)],
                    p.approx.fixed_cov[(1, 1)],
                ],
                hyper: p.hyper,
            })
            .collect();
        Ok(LatentMixture { components })
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> &MixtureComponent {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u <= acc {
                return c;
            }
        }
        self.components.last().expect("mixture is non-empty")
    }

    /// Draws of the intercept pair `(mu, nu)`.
    pub fn draw_intercepts(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| self.pick(&mut rng).draw_intercepts(&mut rng))
            .collect()
    }

    /// Draws of a new study's logit operating point
    /// `(mu + phi*, nu + psi*)`.
    pub fn draw_predictive(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c = self.pick(&mut rng);
                let (mu, nu) = c.draw_intercepts(&mut rng);
                let (phi, psi) = c.draw_effects(&mut rng);
                (mu + phi, nu + psi)
            })
            .collect()
    }
}

/// Trace the highest-density region holding `level` of the draws: smooth a
/// two-dimensional histogram of the draws, set the threshold at the
/// `1 - level` quantile of the smoothed density evaluated at the draws
/// themselves, and trace that level set with marching squares.  Returns the
/// largest closed loop, in draw coordinates.
pub fn hpd_region(draws: &[(f64, f64)], level: f64, bins: usize) -> Result<Vec<(f64, f64)>> {
    if draws.len() < 100 {
        return Err(Error::Domain(format!(
            "contouring needs at least 100 draws, got {}",
            draws.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0, 1), got {level}")));
    }
    let bins = bins.max(32);
    let n = draws.len() as f64;

    let (mut mx, mut my, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in draws {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    for (x, y) in draws {
        sx += (x - mx) * (x - mx);
        sy += (y - my) * (y - my);
    }
    sx = (sx / n).sqrt().max(1e-12);
    sy = (sy / n).sqrt().max(1e-12);

    // Scott's bandwidth for two dimensions.
    let scale = n.powf(-1.0 / 6.0);
    let (hx, hy) = (sx * scale, sy * scale);

    let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in draws {
        lo_x = lo_x.min(*x);
        hi_x = hi_x.max(*x);
        lo_y = lo_y.min(*y);
        hi_y = hi_y.max(*y);
    }
    lo_x -= 4.0 * hx;
    hi_x += 4.0 * hx;
    lo_y -= 4.0 * hy;
    hi_y += 4.0 * hy;
    let dx = (hi_x - lo_x) / (bins - 1) as f64;
    let dy = (hi_y - lo_y) / (bins - 1) as f64;
    if !(dx > 0.0 && dy > 0.0) {
        return Err(Error::Numerical("draws are degenerate in one coordinate".into()));
    }

    // Cloud-in-cell histogram, then a separable Gaussian blur at the
    // bandwidth scale.
    let mut field = vec![0.0f64; bins * bins];
    for (x, y) in draws {
        let fx = (x - lo_x) / dx;
        let fy = (y - lo_y) / dy;
        let ix = (fx.floor() as usize).min(bins - 2);
        let iy = (fy.floor() as usize).min(bins - 2);
        let tx = (fx - ix as f64).clamp(0.0, 1.0);
        let ty = (fy - iy as f64).clamp(0.0, 1.0);
        field[iy * bins + ix] += (1.0 - tx) * (1.0 - ty);
        field[iy * bins + ix + 1] += tx * (1.0 - ty);
        field[(iy + 1) * bins + ix] += (1.0 - tx) * ty;
        field[(iy + 1) * bins + ix + 1] += tx * ty;
    }
    blur_rows(&mut field, bins, hx / dx);
    blur_cols(&mut field, bins, hy / dy);

    // Threshold: the (1 - level) quantile of the density at the draws.
    let mut at_draws: Vec<f64> = draws
        .iter()
        .map(|(x, y)| bilinear(&field, bins, (x - lo_x) / dx, (y - lo_y) / dy))
        .collect();
    at_draws.sort_by(|a, b| a.partial_cmp(b).expect("densities are finite"));
    let k = ((1.0 - level) * n).floor() as usize;
    let threshold = at_draws[k.min(at_draws.len() - 1)];

    let loops = marching_squares(&field, bins, threshold);
    let best = loops
        .into_iter()
        .max_by(|a, b| {
            polygon_area(a)
                .abs()
                .partial_cmp(&polygon_area(b).abs())
                .expect("areas are finite")
        })
        .ok_or_else(|| Error::Numerical("no density contour found at the requested level".into()))?;
    Ok(best
        .into_iter()
        .map(|(gx, gy)| (lo_x + gx * dx, lo_y + gy * dy))
        .collect())
}

fn blur_rows(field: &mut [f64], bins: usize, sigma: f64) {
    let kernel = gaussian_kernel(sigma, bins);
    let mut row = vec![0.0f64; bins];
    for r in 0..bins {
        row.copy_from_slice(&field[r * bins..(r + 1) * bins]);
        convolve_into(&row, &kernel, &mut field[r * bins..(r + 1) * bins]);
    }
}

fn blur_cols(field: &mut [f64], bins: usize, sigma: f64) {
    let kernel = gaussian_kernel(sigma, bins);
    let mut col = vec![0.0f64; bins];
    let mut out = vec![0.0f64; bins];
    for c in 0..bins {
        for r in 0..bins {
            col[r] = field[r * bins + c];
        }
        convolve_into(&col, &kernel, &mut out);
        for r in 0..bins {
            field[r * bins + c] = out[r];
        }
    }
}

/// Normalised half-kernel `[w0, w1, ..., wR]` for a Gaussian blur.
fn gaussian_kernel(sigma: f64, bins: usize) -> Vec<f64> {
    let radius = ((4.0 * sigma).ceil() as usize).clamp(1, bins - 1);
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma.max(1e-9)).powi(2)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    for w in &mut k {
        *w /= total;
    }
    k
}

fn convolve_into(src: &[f64], half_kernel: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let r = half_kernel.len() - 1;
    for i in 0..n {
        let mut acc = src[i] * half_kernel[0];
        for j in 1..=r {
            if i >= j {
                acc += src[i - j] * half_kernel[j];
            }
            if i + j < n {
                acc += src[i + j] * half_kernel[j];
            }
        }
        dst[i] = acc;
    }
}

fn bilinear(field: &[f64], bins: usize, fx: f64, fy: f64) -> f64 {
    let ix = (fx.floor().max(0.0) as usize).min(bins - 2);
    let iy = (fy.floor().max(0.0) as usize).min(bins - 2);
    let tx = (fx - ix as f64).clamp(0.0, 1.0);
    let ty = (fy - iy as f64).clamp(0.0, 1.0);
    let f00 = field[iy * bins + ix];
    let f10 = field[iy * bins + ix + 1];
    let f01 = field[(iy + 1) * bins + ix];
    let f11 = field[(iy + 1) * bins + ix + 1];
    f00 * (1.0 - tx) * (1.0 - ty) + f10 * tx * (1.0 - ty) + f01 * (1.0 - tx) * ty + f11 * tx * ty
}

/// Identity of a grid edge a contour crossing sits on: cell indices plus
/// orientation (0 = horizontal edge from `(i, j)` to `(i+1, j)`,
/// 1 = vertical edge from `(i, j)` to `(i, j+1)`).
type EdgeKey = (usize, usize, u8);

/// Walk the level set `field = threshold` and return the closed loops found,
/// vertices in (fractional) grid coordinates.
fn marching_squares(field: &[f64], bins: usize, threshold: f64) -> Vec<Vec<(f64, f64)>> {
    use std::collections::HashMap;

    // Crossing point on an edge, by inverse linear interpolation.
    let cross_h = |i: usize, j: usize| -> (f64, f64) {
        let a = field[j * bins + i] - threshold;
        let b = field[j * bins + i + 1] - threshold;
        let t = if (a - b).abs() < 1e-300 { 0.5 } else { a / (a - b) };
        (i as f64 + t.clamp(0.0, 1.0), j as f64)
    };
    let cross_v = |i: usize, j: usize| -> (f64, f64) {
        let a = field[j * bins + i] - threshold;
        let b = field[(j + 1) * bins + i] - threshold;
        let t = if (a - b).abs() < 1e-300 { 0.5 } else { a / (a - b) };
        (i as f64, j as f64 + t.clamp(0.0, 1.0))
    };

    // Segments per cell, endpoints tagged by the edges they sit on.
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for j in 0..bins - 1 {
        for i in 0..bins - 1 {
            let v00 = field[j * bins + i] > threshold;
            let v10 = field[j * bins + i + 1] > threshold;
            let v11 = field[(j + 1) * bins + i + 1] > threshold;
            let v01 = field[(j + 1) * bins + i] > threshold;
            let case = (v00 as u8) | (v10 as u8) << 1 | (v11 as u8) << 2 | (v01 as u8) << 3;
            if case == 0 || case == 15 {
                continue;
            }
            let bottom: EdgeKey = (i, j, 0);
            let top: EdgeKey = (i, j + 1, 0);
            let left: EdgeKey = (i, j, 1);
            let right: EdgeKey = (i + 1, j, 1);
            match case {
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 | 10 => {
                    // Saddle: split by the cell-centre value.
                    let centre = 0.25
                        * (field[j * bins + i]
                            + field[j * bins + i + 1]
                            + field[(j + 1) * bins + i + 1]
                            + field[(j + 1) * bins + i]);
                    let centre_inside = centre > threshold;
                    if (case == 5) == centre_inside {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    }
                }
                _ => unreachable!("cases 0 and 15 are filtered"),
            }
        }
    }

    // Chain segments into loops through shared edges.
    let mut adjacency: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (idx, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(idx);
        adjacency.entry(*b).or_default().push(idx);
    }
    let point_of = |e: &EdgeKey| -> (f64, f64) {
        if e.2 == 0 {
            cross_h(e.0, e.1)
        } else {
            cross_v(e.0, e.1)
        }
    };

    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut polyline = vec![point_of(&segments[start].0), point_of(&segments[start].1)];
        let first_edge = segments[start].0;
        let mut at = segments[start].1;
        // Bounded walk: each segment is visited once.
        for _ in 0..segments.len() {
            if at == first_edge {
                break;
            }
            let next = adjacency
                .get(&at)
                .and_then(|ids| ids.iter().find(|&&id| !used[id]).copied());
            let Some(id) = next else { break };
            used[id] = true;
            let (a, b) = segments[id];
            at = if a == at { b } else { a };
            polyline.push(point_of(&at));
        }
        // Drop the duplicated closing vertex when the walk closed.
        if polyline.len() > 2 {
            let first = polyline[0];
            let last = *polyline.last().expect("non-empty polyline");
            if (first.0 - last.0).abs() < 1e-9 && (first.1 - last.1).abs() < 1e-9 {
                polyline.pop();
            }
            loops.push(polyline);
        }
    }
    loops
}

/// Signed area of a closed polygon (shoelace formula).
pub fn polygon_area(polygon: &[(f64, f64)]) -> f64 {
    let n = polygon.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = polygon[i];
        let (x1, y1) = polygon[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

/// Even-odd ray-casting point-in-polygon test (closed polygon, last vertex
/// joins the first).
pub fn point_in_polygon(point: (f64, f64), polygon: &[(f64, f64)]) -> bool {
    let (px, py) = point;
    let n = polygon.len();
    let mut inside = false;
    for i in 0..n {
        let (x0, y0) = polygon[i];
        let (x1, y1) = polygon[(i + 1) % n];
        if (y0 > py) != (y1 > py) {
            let x_cross = x0 + (py - y0) / (y1 - y0) * (x1 - x0);
            if px < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// The summary curve over an explicit logit-specificity interval.  The grid
/// always contains `nu_mean` itself, so the curve passes through the summary
/// operating point exactly.
pub fn sroc_curve(
    inputs: &CurveInputs,
    logit_sp_range: (f64, f64),
    points: usize,
) -> Vec<(f64, f64)> {
    let (lo, hi) = logit_sp_range;
    let n = points.max(2);
    let mut xs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    xs.push(inputs.nu_mean);
    xs.sort_by(|a, b| a.partial_cmp(b).expect("grid values are finite"));
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    xs.iter()
        .map(|&x| (1.0 - invlogit(x), invlogit(inputs.logit_se_at(x))))
        .collect()
}

/// Observed logit-specificity range of a dataset, extended by 20% of its
/// width on both sides (continuity-corrected so end counts stay finite).
pub fn observed_logit_sp_range(dataset: &Dataset) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &dataset.studies {
        let rate = (s.true_neg as f64 + 0.5) / (s.n_healthy() as f64 + 1.0);
        let l = logit(rate);
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let width = (hi - lo).max(1.0);
    (lo - 0.2 * width, hi + 0.2 * width)
}

/// Compute the full plot geometry for a covariate-free fit.
pub fn sroc_geometry(
    dataset: &Dataset,
    summary: &PosteriorSummary,
    grid: &HyperGrid,
    config: &SrocConfig,
) -> Result<SrocGeometry> {
    if dataset.has_covariates() {
        return Err(Error::Unsupported(
            "summary ROC geometry is only defined for covariate-free fits".into(),
        ));
    }
    let inputs = CurveInputs::from_summary(summary)?;
    let mixture = LatentMixture::from_grid(grid)?;

    let summary_point = (1.0 - invlogit(inputs.nu_mean), invlogit(inputs.mu_mean));
    let curve = sroc_curve(&inputs, observed_logit_sp_range(dataset), config.curve_points);

    let to_roc = |poly: Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        poly.into_iter()
            .map(|(m, v)| (1.0 - invlogit(v), invlogit(m)))
            .collect()
    };
    let intercept_draws = mixture.draw_intercepts(config.n_draws, config.seed);
    let credible_region = to_roc(hpd_region(&intercept_draws, config.level, config.bins)?);
    let predictive_draws =
        mixture.draw_predictive(config.n_draws, config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let prediction_region = to_roc(hpd_region(&predictive_draws, config.level, config.bins)?);

    let study_points = dataset
        .studies
        .iter()
        .map(|s| StudyPoint {
            fpr: s.false_pos as f64 / s.n_healthy() as f64,
            se: s.true_pos as f64 / s.n_diseased() as f64,
            n: s.n_total(),
        })
        .collect();

    Ok(SrocGeometry {
        summary_point,
        curve,
        credible_region,
        prediction_region,
        study_points,
    })
}

/// CSV of every element of the geometry: one row per vertex/point with the
/// element name, vertex index and ROC coordinates (study rows carry the study
/// size in the last column).
pub fn polylines_csv(geometry: &SrocGeometry) -> String {
    let mut out = String::from("element,vertex,fpr,sensitivity,study_n\n");
    let (x, y) = geometry.summary_point;
    out.push_str(&format!("summary_point,0,{x},{y},\n"));
    for (name, poly) in [
        ("curve", &geometry.curve),
        ("credible_region", &geometry.credible_region),
        ("prediction_region", &geometry.prediction_region),
    ] {
        for (i, (x, y)) in poly.iter().enumerate() {
            out.push_str(&format!("{name},{i},{x},{y},\n"));
        }
    }
    for (i, p) in geometry.study_points.iter().enumerate() {
        out.push_str(&format!("study,{i},{},{},{}\n", p.fpr, p.se, p.n));
    }
    out
}

/// Render the plot as a self-contained SVG document.
pub fn render_svg(geometry: &SrocGeometry) -> String {
    let size = 560.0;
    let margin = 60.0;
    let span = size - 2.0 * margin;
    let sx = |x: f64| margin + x * span;
    let sy = |y: f64| size - margin - y * span;
    let path_of = |poly: &[(f64, f64)], close: bool| -> String {
        let mut d = String::new();
        for (i, (x, y)) in poly.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            d.push_str(&format!("{cmd}{:.2},{:.2} ", sx(*x), sy(*y)));
        }
        if close {
            d.push('Z');
        }
        d
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         viewBox=\"0 0 {size} {size}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n"
    ));
    // Axes and ticks.
    svg.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{span}\" height=\"{span}\" fill=\"none\" \
         stroke=\"black\" stroke-width=\"1\"/>\n",
        m = margin
    ));
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            sx(v),
            size - margin,
            sx(v),
            size - margin + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{v:.1}</text>\n",
            sx(v),
            size - margin + 20.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            margin - 6.0,
            sy(v),
            margin,
            sy(v)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{v:.1}</text>\n",
            margin - 10.0,
            sy(v) + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\">1 - specificity</text>\n",
        margin + span / 2.0,
        size - 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.2})\">sensitivity</text>\n",
        margin + span / 2.0,
        margin + span / 2.0
    ));

    // Study bubbles, scaled by the square root of the study size.
    let n_max = geometry
        .study_points
        .iter()
        .map(|p| p.n)
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    for p in &geometry.study_points {
        let r = 3.0 + 11.0 * (p.n as f64 / n_max).sqrt();
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r:.2}\" fill=\"#9ecae1\" \
             fill-opacity=\"0.55\" stroke=\"#3182bd\"/>\n",
            sx(p.fpr),
            sy(p.se)
        ));
    }
    // Prediction region (gray dotted), credible region (black dashed),
    // summary curve (solid), summary point.
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"gray\" stroke-width=\"1.5\" \
         stroke-dasharray=\"2 6\"/>\n",
        path_of(&geometry.prediction_region, true)
    ));
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" \
         stroke-dasharray=\"8 5\"/>\n",
        path_of(&geometry.credible_region, true)
    ));
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n",
        path_of(&geometry.curve, false)
    ));
    let (px, py) = geometry.summary_point;
    svg.push_str(&format!(
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"black\"/>\n",
        sx(px),
        sy(py)
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StudyRecord;
    use crate::inference::InferenceConfig;
    use crate::model::PriorBundle;
    use crate::priors::CorrelationPrior;

    fn synthetic_mixture(var_phi: f64, var_psi: f64, rho: f64) -> LatentMixture {
        LatentMixture {
            components: vec![
                MixtureComponent {
                    weight: 0.6,
                    mean: [1.0, 2.0],
                    cov: [0.04, -0.012, 0.09],
                    hyper: Hyperparameters::new(var_phi, var_psi, rho).unwrap(),
                },
                MixtureComponent {
                    weight: 0.4,
                    mean: [1.2, 1.8],
                    cov: [0.06, -0.02, 0.12],
                    hyper: Hyperparameters::new(var_phi * 1.5, var_psi * 0.8, rho).unwrap(),
                },
            ],
        }
    }

    #[test]
    fn hpd_region_holds_the_requested_mass() {
        let mixture = synthetic_mixture(0.5, 1.0, -0.6);
        let draws = mixture.draw_intercepts(10_000, 31);
        let region = hpd_region(&draws, 0.95, 192).unwrap();
        assert!(region.len() >= 16, "contour should be well resolved");
        let inside = draws
            .iter()
            .filter(|&&p| point_in_polygon(p, &region))
            .count() as f64
            / draws.len() as f64;
        assert!(
            (inside - 0.95).abs() < 0.01,
            "fraction inside the 95% contour was {inside}"
        );
        // The mixture mean must be inside.
        assert!(point_in_polygon((1.08, 1.92), &region));
    }

    #[test]
    fn prediction_contains_credible_region() {
        let mixture = synthetic_mixture(0.5, 1.0, -0.6);
        let cred = hpd_region(&mixture.draw_intercepts(8_000, 5), 0.95, 160).unwrap();
        let pred = hpd_region(&mixture.draw_predictive(8_000, 6), 0.95, 160).unwrap();
        for v in &cred {
            assert!(
                point_in_polygon(*v, &pred),
                "credible vertex {v:?} escaped the prediction region"
            );
        }
        assert!(polygon_area(&pred).abs() > 2.0 * polygon_area(&cred).abs());
    }

    #[test]
    fn degenerate_effects_collapse_the_prediction_region() {
        // With vanishing random-effect variance the predictive draws carry
        // no extra spread, so both regions coincide up to contouring error.
        let mixture = synthetic_mixture(1e-10, 1e-10, 0.0);
        let cred = hpd_region(&mixture.draw_intercepts(10_000, 11), 0.95, 192).unwrap();
        let pred = hpd_region(&mixture.draw_predictive(10_000, 12), 0.95, 192).unwrap();
        let ratio = polygon_area(&pred).abs() / polygon_area(&cred).abs();
        assert!(
            (ratio - 1.0).abs() < 0.15,
            "area ratio {ratio} should be close to 1"
        );
    }

    #[test]
    fn curve_is_flat_without_correlation_and_passes_through_the_summary() {
        let inputs = CurveInputs {
            mu_mean: 1.1,
            nu_mean: 2.0,
            rho_mean: 0.0,
            sd_phi_mean: 0.5,
            sd_psi_mean: 1.4,
        };
        let curve = sroc_curve(&inputs, (-1.0, 4.0), 101);
        for (_, se) in &curve {
            assert!((se - invlogit(1.1)).abs() < 1e-12);
        }
        // The exact summary operating point is on the curve.
        let target = (1.0 - invlogit(2.0), invlogit(1.1));
        assert!(curve
            .iter()
            .any(|(x, y)| (x - target.0).abs() < 1e-12 && (y - target.1).abs() < 1e-12));
    }

    #[test]
    fn curve_slope_follows_the_correlation_sign() {
        let inputs = CurveInputs {
            mu_mean: 1.19,
            nu_mean: 2.29,
            rho_mean: -0.79,
            sd_phi_mean: 0.47,
            sd_psi_mean: 1.81,
        };
        assert!(inputs.slope() < 0.0);
        let curve = sroc_curve(&inputs, (0.0, 4.0), 101);
        // As specificity rises (ROC x falls), the curve's sensitivity falls:
        // in plot order (ascending logit-specificity) Se is decreasing.
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
            assert!(w[1].0 <= w[0].0 + 1e-12);
        }
    }

    #[test]
    fn geometry_on_a_pinned_correlation_fit() {
        let dataset = Dataset::new(vec![
            StudyRecord::new("a", 36, 8, 50, 18),
            StudyRecord::new("b", 70, 20, 42, 10),
            StudyRecord::new("c", 24, 6, 33, 11),
            StudyRecord::new("d", 51, 14, 61, 16),
        ])
        .unwrap();
        let mut priors = PriorBundle::default();
        priors.correlation = CorrelationPrior::fixed(0.0).unwrap();
        let config = InferenceConfig::default();
        let grid = crate::inference::explore_hyperposterior(&dataset, &priors, &config).unwrap();
        let summary = crate::inference::marginals_from_grid(&grid, &config).unwrap();
        let geo = sroc_geometry(
            &dataset,
            &summary,
            &grid,
            &SrocConfig {
                n_draws: 4000,
                bins: 128,
                ..SrocConfig::default()
            },
        )
        .unwrap();

        // Zero pinned correlation: flat summary curve.
        for w in geo.curve.windows(2) {
            assert!((w[0].1 - w[1].1).abs() < 1e-12);
        }
        // All coordinates inside the unit square.
        for (x, y) in geo
            .curve
            .iter()
            .chain(&geo.credible_region)
            .chain(&geo.prediction_region)
            .chain(std::iter::once(&geo.summary_point))
        {
            assert!((0.0..=1.0).contains(x) && (0.0..=1.0).contains(y));
        }
        // Nesting: summary point inside the credible region, credible
        // region inside the prediction region.
        assert!(point_in_polygon(geo.summary_point, &geo.credible_region));
        for v in &geo.credible_region {
            assert!(point_in_polygon(*v, &geo.prediction_region));
        }
        // Study points carry the observed rates.
        assert_eq!(geo.study_points.len(), 4);
        assert!((geo.study_points[0].se - 36.0 / 44.0).abs() < 1e-12);
        assert!((geo.study_points[0].fpr - 18.0 / 68.0).abs() < 1e-12);

        // Same seed, same geometry; emissions are stable and well-formed.
        let geo2 = sroc_geometry(
            &dataset,
            &summary,
            &grid,
            &SrocConfig {
                n_draws: 4000,
                bins: 128,
                ..SrocConfig::default()
            },
        )
        .unwrap();
        assert_eq!(polylines_csv(&geo), polylines_csv(&geo2));
        let svg = render_svg(&geo);
        assert!(svg.starts_with("<svg "));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<path ").count(), 3);
        assert_eq!(svg.matches("<circle ").count(), 4 + 1);
    }

    #[test]
    fn covariate_fits_are_rejected() {
        let mut a = StudyRecord::new("a", 36, 8, 50, 18);
        a.se_covariates = vec![1.0];
        let mut b = StudyRecord::new("b", 70, 20, 42, 10);
        b.se_covariates = vec![0.0];
        let dataset = Dataset::with_covariates(vec![a, b], vec!["assay".into()], vec![]).unwrap();
        let priors = PriorBundle::default();
        let config = InferenceConfig::default();
        let grid = crate::inference::explore_hyperposterior(&dataset, &priors, &config).unwrap();
        let summary = crate::inference::marginals_from_grid(&grid, &config).unwrap();
        let err = sroc_geometry(&dataset, &summary, &grid, &SrocConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }
}
