//! Adaptive random-walk MCMC over the joint posterior, used as a reference
//! for the deterministic engine.
//!
//! The sampler is Metropolis-within-Gibbs with three kinds of blocks: one
//! per-study random-effect pair, the fixed effects jointly, and the
//! hyperparameters on their internal scale.  During burn-in each block's
//! proposal scale adapts in batches of 50 iterations — the log-scale moves
//! by `min(0.05, batch^{-1/2})` towards the classic acceptance targets
//! (0.44 for scalar blocks, 0.234 for multivariate ones) — and is frozen
//! afterwards, so the recorded chain is a fixed-kernel Markov chain.
//!
//! Runs are reproducible: a given seed yields bit-identical draws.  The
//! likelihood can be switched off to sample the prior alone, which turns
//! the sampler into a check of its own prior plumbing.

use super::{point_mass_marginal, transform_density, Marginal, PosteriorSummary};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{invlogit, mean_and_variance, sample_quantile, trapezoid, LN_TWO_PI};
use crate::model::{
    linear_predictors, Channel, Hyperparameters, LatentField, LatentLayout, ObservationModel,
    PriorBundle,
};
use crate::math::normal_log_pdf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Iterations per adaptation batch during burn-in.
const ADAPT_BATCH: usize = 50;
/// Internal-scale coordinates beyond this are rejected outright.
const MAX_INTERNAL: f64 = 35.0;
/// Histogram resolution for the binned kernel density estimates.
const KDE_BINS: usize = 2048;

/// Sampler configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    /// Iterations discarded (and used for adaptation) at the start.
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    pub seed: u64,
    /// With `false` the likelihood is dropped and the chain samples the
    /// prior, which validation tests compare against closed forms.
    pub include_likelihood: bool,
    /// Points in each reported marginal density grid.
    pub density_grid_points: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 200_000,
            burn_in: 20_000,
            thin: 1,
            seed: 20_150_901,
            include_likelihood: true,
            density_grid_points: 512,
        }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Domain(format!(
                "burn-in ({}) must be smaller than the iteration count ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Domain("thinning interval must be at least 1".into()));
        }
        if (self.iterations - self.burn_in) / self.thin < 10 {
            return Err(Error::Domain(
                "fewer than 10 retained draws; increase iterations or lower thinning".into(),
            ));
        }
        Ok(())
    }
}

/// Post-burn-in draws of the reported quantities.
#[derive(Debug, Clone, Default)]
pub struct McmcSamples {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Pooled sensitivity `logit⁻¹(mu)` per draw.
    pub se: Vec<f64>,
    /// Pooled specificity `logit⁻¹(nu)` per draw.
    pub sp: Vec<f64>,
    pub var_phi: Vec<f64>,
    pub var_psi: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Post-burn-in acceptance rates per block kind.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct McmcAcceptance {
    /// Mean over the per-study pair blocks.
    pub pairs: f64,
    pub fixed: f64,
    pub hyper: f64,
}

/// Effective sample sizes of the recorded chains (initial monotone
/// sequence estimator).  `rho` is absent when the correlation is pinned.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EffectiveSamples {
    pub mu: f64,
    pub nu: f64,
    pub var_phi: f64,
    pub var_psi: f64,
    pub rho: Option<f64>,
}

impl EffectiveSamples {
    pub fn minimum(&self) -> f64 {
        let base = self.mu.min(self.nu).min(self.var_phi).min(self.var_psi);
        match self.rho {
            Some(r) => base.min(r),
            None => base,
        }
    }
}

/// A complete reference run.
#[derive(Debug, Clone)]
pub struct McmcRun {
    pub summary: PosteriorSummary,
    pub samples: McmcSamples,
    pub acceptance: McmcAcceptance,
    pub ess: EffectiveSamples,
    pub config: McmcConfig,
    pub warnings: Vec<String>,
}

/// One adaptive random-walk block.
struct Block {
    log_scale: f64,
    target: f64,
    batch_attempts: u32,
    batch_accepts: u32,
    attempts: u64,
    accepts: u64,
}

impl Block {
    fn new(initial_scale: f64, dim: usize) -> Self {
        Block {
            log_scale: initial_scale.ln(),
            target: if dim == 1 { 0.44 } else { 0.234 },
            batch_attempts: 0,
            batch_accepts: 0,
            attempts: 0,
            accepts: 0,
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, accepted: bool, sampling: bool) {
        self.batch_attempts += 1;
        self.batch_accepts += u32::from(accepted);
        if sampling {
            self.attempts += 1;
            self.accepts += u64::from(accepted);
        }
    }

    fn adapt(&mut self, batch: usize) {
        if self.batch_attempts == 0 {
            return;
        }
        let rate = f64::from(self.batch_accepts) / f64::from(self.batch_attempts);
        let delta = (batch as f64).powf(-0.5).min(0.05);
        if rate > self.target {
            self.log_scale += delta;
        } else {
            self.log_scale -= delta;
        }
        self.log_scale = self.log_scale.clamp(-9.2, 2.3);
        self.batch_attempts = 0;
        self.batch_accepts = 0;
    }

    fn rate(&self) -> f64 {
        if self.attempts == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }
}

/// Run the reference sampler.
pub fn mcmc_oracle(
    dataset: &Dataset,
    priors: &PriorBundle,
    config: &McmcConfig,
) -> Result<McmcRun> {
    config.validate()?;
    priors.validate()?;
    let layout = LatentLayout::of(dataset);
    let n = layout.n_studies;
    let m = layout.fixed_dim();
    let pinned = priors.correlation.fixed_value();
    let dim_h = if pinned.is_some() { 2 } else { 3 };
    let internal3 = |t: &[f64]| -> [f64; 3] {
        match pinned {
            Some(rho) => [t[0], t[1], ((1.0 + rho) / (1.0 - rho)).ln()],
            None => [t[0], t[1], t[2]],
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut field = LatentField::zero(&layout);
    let mut t = vec![0.0; dim_h];
    if dim_h == 3 {
        t[2] = priors.correlation.centre_z();
    }
    let mut hyper = Hyperparameters::from_internal(&internal3(&t));
    let (mut prec, mut log_det_cov) = hyper.pair_precision();
    let mut log_hyper = priors.log_hyperprior_internal(&internal3(&t));

    // Cached per-study linear predictors and log-likelihood terms.
    let mut eta_se = vec![0.0; n];
    let mut eta_sp = vec![0.0; n];
    let mut ll_se = vec![0.0; n];
    let mut ll_sp = vec![0.0; n];
    let like = config.include_likelihood;
    for i in 0..n {
        let (a, b) = linear_predictors(dataset, &field, i);
        eta_se[i] = a;
        eta_sp[i] = b;
        if like {
            ll_se[i] = dataset.logpdf_d012(i, Channel::Se, a).0;
            ll_sp[i] = dataset.logpdf_d012(i, Channel::Sp, b).0;
        }
    }

    let mut pair_blocks: Vec<Block> = (0..n).map(|_| Block::new(0.5, 2)).collect();
    let mut fixed_block = Block::new(0.25, m);
    let mut hyper_block = Block::new(0.25, dim_h);

    let retained = (config.iterations - config.burn_in).div_ceil(config.thin);
    let mut samples = McmcSamples {
        mu: Vec::with_capacity(retained),
        nu: Vec::with_capacity(retained),
        se: Vec::with_capacity(retained),
        sp: Vec::with_capacity(retained),
        var_phi: Vec::with_capacity(retained),
        var_psi: Vec::with_capacity(retained),
        rho: Vec::with_capacity(retained),
    };

    let pair_log_prior = |prec: &nalgebra::Matrix2<f64>, ldc: f64, p: f64, q: f64| -> f64 {
        let quad = prec[(0, 0)] * p * p + 2.0 * prec[(0, 1)] * p * q + prec[(1, 1)] * q * q;
        -LN_TWO_PI - 0.5 * ldc - 0.5 * quad
    };

    let mut batch = 0usize;
    let mut d_fixed = vec![0.0; m];
    for iter in 0..config.iterations {
        let sampling = iter >= config.burn_in;

        // Per-study random-effect pairs.
        for i in 0..n {
            let s = pair_blocks[i].scale();
            let dphi: f64 = s * rng.sample::<f64, _>(StandardNormal);
            let dpsi: f64 = s * rng.sample::<f64, _>(StandardNormal);
            let (phi_new, psi_new) = (field.phi[i] + dphi, field.psi[i] + dpsi);
            let mut delta = pair_log_prior(&prec, log_det_cov, phi_new, psi_new)
                - pair_log_prior(&prec, log_det_cov, field.phi[i], field.psi[i]);
            let mut new_ll = (0.0, 0.0);
            if like {
                new_ll = (
                    dataset.logpdf_d012(i, Channel::Se, eta_se[i] + dphi).0,
                    dataset.logpdf_d012(i, Channel::Sp, eta_sp[i] + dpsi).0,
                );
                delta += new_ll.0 - ll_se[i] + new_ll.1 - ll_sp[i];
            }
            let accepted = delta >= 0.0 || rng.gen::<f64>().ln() < delta;
            if accepted {
                field.phi[i] = phi_new;
                field.psi[i] = psi_new;
                eta_se[i] += dphi;
                eta_sp[i] += dpsi;
                if like {
                    ll_se[i] = new_ll.0;
                    ll_sp[i] = new_ll.1;
                }
            }
            pair_blocks[i].record(accepted, sampling);
        }

        // Joint fixed-effect update.
        {
            let s = fixed_block.scale();
            for d in d_fixed.iter_mut() {
                *d = s * rng.sample::<f64, _>(StandardNormal);
            }
            let mut delta = 0.0;
            let old_fixed: Vec<f64> = [field.mu, field.nu]
                .into_iter()
                .chain(field.alpha.iter().copied())
                .chain(field.beta.iter().copied())
                .collect();
            for (x, d) in old_fixed.iter().zip(&d_fixed) {
                delta += normal_log_pdf(x + d, 0.0, priors.intercept_variance)
                    - normal_log_pdf(*x, 0.0, priors.intercept_variance);
            }
            // Predictor shifts per study.
            let mut d_eta = Vec::with_capacity(n);
            if like {
                for i in 0..n {
                    let (xs, xp) = dataset.covariates(i);
                    let mut dse = d_fixed[0];
                    let mut dsp = d_fixed[1];
                    for (j, x) in xs.iter().enumerate() {
                        dse += d_fixed[2 + j] * x;
                    }
                    for (j, x) in xp.iter().enumerate() {
                        dsp += d_fixed[2 + layout.p_se + j] * x;
                    }
                    d_eta.push((dse, dsp));
                }
                for i in 0..n {
                    delta += dataset.logpdf_d012(i, Channel::Se, eta_se[i] + d_eta[i].0).0
                        - ll_se[i]
                        + dataset.logpdf_d012(i, Channel::Sp, eta_sp[i] + d_eta[i].1).0
                        - ll_sp[i];
                }
            }
            let accepted = delta >= 0.0 || rng.gen::<f64>().ln() < delta;
            if accepted {
                field.mu += d_fixed[0];
                field.nu += d_fixed[1];
                for (j, a) in field.alpha.iter_mut().enumerate() {
                    *a += d_fixed[2 + j];
                }
                for (j, b) in field.beta.iter_mut().enumerate() {
                    *b += d_fixed[2 + layout.p_se + j];
                }
                if like {
                    for i in 0..n {
                        eta_se[i] += d_eta[i].0;
                        eta_sp[i] += d_eta[i].1;
                        ll_se[i] = dataset.logpdf_d012(i, Channel::Se, eta_se[i]).0;
                        ll_sp[i] = dataset.logpdf_d012(i, Channel::Sp, eta_sp[i]).0;
                    }
                } else {
                    for i in 0..n {
                        let (a, b) = linear_predictors(dataset, &field, i);
                        eta_se[i] = a;
                        eta_sp[i] = b;
                    }
                }
            }
            fixed_block.record(accepted, sampling);
        }

        // Hyperparameter update on the internal scale.
        {
            let s = hyper_block.scale();
            let proposal: Vec<f64> = t
                .iter()
                .map(|v| v + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let accepted = if proposal.iter().any(|v| v.abs() > MAX_INTERNAL) {
                false
            } else {
                let internal_new = internal3(&proposal);
                let hyper_new = Hyperparameters::from_internal(&internal_new);
                let (prec_new, ldc_new) = hyper_new.pair_precision();
                let log_hyper_new = priors.log_hyperprior_internal(&internal_new);
                let mut delta = log_hyper_new - log_hyper;
                for i in 0..n {
                    delta += pair_log_prior(&prec_new, ldc_new, field.phi[i], field.psi[i])
                        - pair_log_prior(&prec, log_det_cov, field.phi[i], field.psi[i]);
                }
                let ok = delta >= 0.0 || rng.gen::<f64>().ln() < delta;
                if ok {
                    t = proposal;
                    hyper = hyper_new;
                    prec = prec_new;
                    log_det_cov = ldc_new;
                    log_hyper = log_hyper_new;
                }
                ok
            };
            hyper_block.record(accepted, sampling);
        }

        if !sampling && (iter + 1) % ADAPT_BATCH == 0 {
            batch += 1;
            for b in pair_blocks.iter_mut() {
                b.adapt(batch);
            }
            fixed_block.adapt(batch);
            hyper_block.adapt(batch);
        }

        if sampling && (iter - config.burn_in) % config.thin == 0 {
            samples.mu.push(field.mu);
            samples.nu.push(field.nu);
            samples.se.push(invlogit(field.mu));
            samples.sp.push(invlogit(field.nu));
            samples.var_phi.push(hyper.var_phi);
            samples.var_psi.push(hyper.var_psi);
            samples.rho.push(hyper.rho);
        }
    }

    let acceptance = McmcAcceptance {
        pairs: pair_blocks.iter().map(Block::rate).sum::<f64>() / n as f64,
        fixed: fixed_block.rate(),
        hyper: hyper_block.rate(),
    };
    let ess = EffectiveSamples {
        mu: ess_initial_monotone(&samples.mu),
        nu: ess_initial_monotone(&samples.nu),
        var_phi: ess_initial_monotone(&samples.var_phi),
        var_psi: ess_initial_monotone(&samples.var_psi),
        rho: if pinned.is_some() {
            None
        } else {
            Some(ess_initial_monotone(&samples.rho))
        },
    };

    let mut warnings = Vec::new();
    for (name, rate) in [
        ("random-effect pairs", acceptance.pairs),
        ("fixed effects", acceptance.fixed),
        ("hyperparameters", acceptance.hyper),
    ] {
        if !(0.05..=0.8).contains(&rate) {
            warnings.push(format!(
                "{name} block acceptance rate {rate:.3} outside [0.05, 0.8]"
            ));
        }
    }
    if ess.minimum() < 200.0 {
        warnings.push(format!(
            "smallest effective sample size {:.0} is below 200; treat summaries with care",
            ess.minimum()
        ));
    }

    let summary = summarize_samples(&samples, pinned, config, warnings.clone())?;
    Ok(McmcRun {
        summary,
        samples,
        acceptance,
        ess,
        config: config.clone(),
        warnings,
    })
}

/// Sample-based posterior summaries with kernel density grids.
fn summarize_samples(
    samples: &McmcSamples,
    pinned: Option<f64>,
    config: &McmcConfig,
    warnings: Vec<String>,
) -> Result<PosteriorSummary> {
    let n_grid = config.density_grid_points.max(64);
    let stats_with = |xs: &[f64], grid: Vec<f64>, density: Vec<f64>| -> Marginal {
        let mut sorted = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (mean, var) = mean_and_variance(xs);
        Marginal {
            mean,
            sd: var.sqrt(),
            q025: sample_quantile(&sorted, 0.025),
            q500: sample_quantile(&sorted, 0.5),
            q975: sample_quantile(&sorted, 0.975),
            grid,
            density,
        }
    };

    let (mu_grid, mu_density) = binned_kde(&samples.mu, n_grid)?;
    let (nu_grid, nu_density) = binned_kde(&samples.nu, n_grid)?;
    let mu = stats_with(&samples.mu, mu_grid, mu_density);
    let nu = stats_with(&samples.nu, nu_grid, nu_density);
    // Smooth the accuracies on the unbounded predictor scale, then change
    // variables back to the probability scale.
    let se_t = transform_density(&mu.grid, &mu.density, invlogit, |_, p| {
        (p * (1.0 - p)).max(1e-300)
    })?;
    let sp_t = transform_density(&nu.grid, &nu.density, invlogit, |_, p| {
        (p * (1.0 - p)).max(1e-300)
    })?;
    let se = stats_with(&samples.se, se_t.grid, se_t.density);
    let sp = stats_with(&samples.sp, sp_t.grid, sp_t.density);

    let log_vp: Vec<f64> = samples.var_phi.iter().map(|v| v.ln()).collect();
    let (gp, dp) = binned_kde(&log_vp, n_grid)?;
    let vp_t = transform_density(&gp, &dp, f64::exp, |_, v| v)?;
    let var_phi = stats_with(&samples.var_phi, vp_t.grid, vp_t.density);
    let log_vq: Vec<f64> = samples.var_psi.iter().map(|v| v.ln()).collect();
    let (gq, dq) = binned_kde(&log_vq, n_grid)?;
    let vq_t = transform_density(&gq, &dq, f64::exp, |_, v| v)?;
    let var_psi = stats_with(&samples.var_psi, vq_t.grid, vq_t.density);

    let rho = match pinned {
        Some(r) => point_mass_marginal(r),
        None => {
            let zs: Vec<f64> = samples
                .rho
                .iter()
                .map(|r| ((1.0 + r) / (1.0 - r)).ln())
                .collect();
            let (gz, dz) = binned_kde(&zs, n_grid)?;
            let rho_t = transform_density(
                &gz,
                &dz,
                |z| (z / 2.0).tanh(),
                |_, r| (((1.0 - r) * (1.0 + r)) / 2.0).max(1e-300),
            )?;
            stats_with(&samples.rho, rho_t.grid, rho_t.density)
        }
    };

    // Pearson correlation of the intercept draws.
    let (m_mu, v_mu) = mean_and_variance(&samples.mu);
    let (m_nu, v_nu) = mean_and_variance(&samples.nu);
    let cov: f64 = samples
        .mu
        .iter()
        .zip(&samples.nu)
        .map(|(a, b)| (a - m_mu) * (b - m_nu))
        .sum::<f64>()
        / samples.mu.len() as f64;
    let denom = (v_mu * v_nu).sqrt();
    let mu_nu_correlation = if denom > 0.0 { cov / denom } else { 0.0 };

    Ok(PosteriorSummary {
        mu,
        nu,
        se,
        sp,
        var_phi,
        var_psi,
        rho,
        mu_nu_correlation,
        marginal_log_likelihood: None,
        warnings,
    })
}

/// Binned Gaussian kernel density estimate with Silverman's bandwidth.
fn binned_kde(samples: &[f64], n_grid: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples to smooth".into()));
    }
    let n = samples.len();
    let (_, var) = mean_and_variance(samples);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = sample_quantile(&sorted, 0.75) - sample_quantile(&sorted, 0.25);
    let mut spread = sd.min(iqr / 1.34);
    if spread <= 0.0 {
        spread = sd.max(1e-9);
    }
    let h = (0.9 * spread * (n as f64).powf(-0.2)).max(1e-9);

    let (x0, x1) = (sorted[0], sorted[n - 1]);
    let width = (x1 - x0).max(1e-12);
    let bin_w = width / KDE_BINS as f64;
    let mut counts = vec![0.0f64; KDE_BINS];
    for x in samples {
        let idx = (((x - x0) / bin_w) as usize).min(KDE_BINS - 1);
        counts[idx] += 1.0;
    }
    let centres: Vec<f64> = (0..KDE_BINS)
        .map(|b| x0 + (b as f64 + 0.5) * bin_w)
        .collect();

    let lo = x0 - 3.0 * h;
    let hi = x1 + 3.0 * h;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
        .collect();
    let var_k = h * h;
    let inv_n = 1.0 / n as f64;
    let density: Vec<f64> = grid
        .iter()
        .map(|g| {
            centres
                .iter()
                .zip(&counts)
                .filter(|(_, c)| **c > 0.0)
                .map(|(c, w)| w * inv_n * normal_log_pdf(*g, *c, var_k).exp())
                .sum()
        })
        .collect();
    // Normalise so downstream consumers can treat the grid as a density.
    let mass = trapezoid(&grid, &density);
    let density = if mass > 0.0 {
        density.iter().map(|d| d / mass).collect()
    } else {
        density
    };
    Ok((grid, density))
}

/// Effective sample size by Geyer's initial monotone sequence: sum the
/// autocovariance in adjacent-lag pairs while the pair sums stay positive
/// and non-increasing.
fn ess_initial_monotone(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 10 {
        return f64::NAN;
    }
    let (mean, gamma0) = mean_and_variance(xs);
    if gamma0 <= 1e-300 {
        // A constant chain carries no autocorrelation information.
        return n as f64;
    }
    let centred: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let gamma = |k: usize| -> f64 {
        if k >= n {
            return 0.0;
        }
        centred[..n - k]
            .iter()
            .zip(&centred[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let mut sigma2 = -gamma0;
    let mut prev = f64::INFINITY;
    let mut m = 0usize;
    loop {
        let pair = gamma(2 * m) + gamma(2 * m + 1);
        if pair <= 0.0 || 2 * m >= n {
            break;
        }
        let pair = pair.min(prev);
        sigma2 += 2.0 * pair;
        prev = pair;
        m += 1;
    }
    if sigma2 <= 0.0 {
        return n as f64;
    }
    (n as f64 * gamma0 / sigma2).min(n as f64)
}
