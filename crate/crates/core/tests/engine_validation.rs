//! Cross-checks of the inference engines against independent computations:
//! finite differences for the latent derivatives, closed forms and symmetry
//! arguments for the fits, and agreement between the Laplace-grid engine and
//! the MCMC chain on the same posterior.

use metadiag_core::inference::{latent_objective, latent_objective_dense};
use metadiag_core::math::{invlogit, normal_log_pdf, sample_quantile};
use metadiag_core::{
    explore_hyperposterior, mcmc_oracle, posterior_marginals, summarize, telomerase,
    CorrelationPcPrior, CorrelationPrior, Dataset, Hyperparameters, InferenceConfig, LatentField,
    LatentLayout, Marginal, McmcConfig, PosteriorSummary, PriorBundle, StudyRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn symmetric_priors() -> PriorBundle {
    PriorBundle {
        correlation: CorrelationPrior::Pc(CorrelationPcPrior::pc0()),
        ..PriorBundle::default()
    }
}

/// Read latent coordinate `idx` in the dense layout order.
fn coord(field: &LatentField, layout: &LatentLayout, idx: usize) -> f64 {
    let m = layout.fixed_dim();
    if idx == 0 {
        field.mu
    } else if idx == 1 {
        field.nu
    } else if idx < 2 + layout.p_se {
        field.alpha[idx - 2]
    } else if idx < m {
        field.beta[idx - 2 - layout.p_se]
    } else if (idx - m) % 2 == 0 {
        field.phi[(idx - m) / 2]
    } else {
        field.psi[(idx - m) / 2]
    }
}

/// Write latent coordinate `idx` in the dense layout order.
fn set_coord(field: &mut LatentField, layout: &LatentLayout, idx: usize, value: f64) {
    let m = layout.fixed_dim();
    if idx == 0 {
        field.mu = value;
    } else if idx == 1 {
        field.nu = value;
    } else if idx < 2 + layout.p_se {
        field.alpha[idx - 2] = value;
    } else if idx < m {
        field.beta[idx - 2 - layout.p_se] = value;
    } else if (idx - m) % 2 == 0 {
        field.phi[(idx - m) / 2] = value;
    } else {
        field.psi[(idx - m) / 2] = value;
    }
}

#[test]
fn latent_derivatives_match_finite_differences() {
    let ds = telomerase();
    let layout = LatentLayout::of(&ds);
    let dim = layout.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let h = 1e-5;

    for point in 0..20 {
        let mut field = LatentField::zero(&layout);
        field.mu = rng.gen_range(-1.0..2.5);
        field.nu = rng.gen_range(-1.0..2.5);
        for i in 0..layout.n_studies {
            field.phi[i] = rng.gen_range(-1.0..1.0);
            field.psi[i] = rng.gen_range(-1.0..1.0);
        }
        let hyper = Hyperparameters::new(
            rng.gen_range(0.1..2.0),
            rng.gen_range(0.2..4.0),
            rng.gen_range(-0.9..0.6),
        )
        .unwrap();

        let (_, grad, prec) = latent_objective_dense(&ds, &layout, &field, &hyper, 100.0);

        // Gradient against central differences of the objective.
        let grad_scale = grad.iter().fold(1.0f64, |a, g| a.max(g.abs()));
        for j in 0..dim {
            let x = coord(&field, &layout, j);
            let mut up = field.clone();
            set_coord(&mut up, &layout, j, x + h);
            let mut down = field.clone();
            set_coord(&mut down, &layout, j, x - h);
            let fd = (latent_objective(&ds, &up, &hyper, 100.0)
                - latent_objective(&ds, &down, &hyper, 100.0))
                / (2.0 * h);
            assert!(
                (fd - grad[j]).abs() / grad_scale < 1e-5,
                "point {point}, coordinate {j}: gradient {} vs fd {fd}",
                grad[j]
            );
        }

        // Negative Hessian (the returned precision) against central
        // differences of the analytic gradient.
        let prec_scale = prec.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for j in 0..dim {
            let x = coord(&field, &layout, j);
            let mut up = field.clone();
            set_coord(&mut up, &layout, j, x + h);
            let mut down = field.clone();
            set_coord(&mut down, &layout, j, x - h);
            let (_, gup, _) = latent_objective_dense(&ds, &layout, &up, &hyper, 100.0);
            let (_, gdn, _) = latent_objective_dense(&ds, &layout, &down, &hyper, 100.0);
            for k in 0..dim {
                let fd = -(gup[k] - gdn[k]) / (2.0 * h);
                assert!(
                    (fd - prec[(j, k)]).abs() / prec_scale < 1e-3,
                    "point {point}, entry ({j},{k}): precision {} vs fd {fd}",
                    prec[(j, k)]
                );
            }
        }
    }
}

#[test]
fn overwhelming_balanced_counts_pin_the_intercepts_at_zero() {
    let records = (0..3)
        .map(|i| StudyRecord::new(format!("s{i}"), 500_000, 500_000, 500_000, 500_000))
        .collect();
    let ds = Dataset::new(records).unwrap();
    let layout = LatentLayout::of(&ds);
    let hyper = Hyperparameters::new(1.0, 1.0, 0.0).unwrap();
    let fit =
        metadiag_core::inference::laplace_fit_observations(&ds, &layout, &hyper, 100.0, None)
            .unwrap();
    assert!(fit.fixed_mean[0].abs() < 1e-2, "mu = {}", fit.fixed_mean[0]);
    assert!(fit.fixed_mean[1].abs() < 1e-2, "nu = {}", fit.fixed_mean[1]);
}

#[test]
fn conditional_mode_reproduces_the_pooled_sensitivity() {
    let ds = telomerase();
    let layout = LatentLayout::of(&ds);
    let hyper = Hyperparameters::new(0.237, 3.491, -0.791).unwrap();
    let fit =
        metadiag_core::inference::laplace_fit_observations(&ds, &layout, &hyper, 100.0, None)
            .unwrap();
    let pooled = invlogit(fit.fixed_mean[0]);
    assert!(
        (pooled - 0.766).abs() < 0.02,
        "pooled sensitivity at the conditional mode: {pooled}"
    );
}

#[test]
fn grid_weights_are_normalised_and_the_mode_is_strongly_negative() {
    let grid = explore_hyperposterior(
        &telomerase(),
        &PriorBundle::default(),
        &InferenceConfig::default(),
    )
    .unwrap();
    let total: f64 = grid.points.iter().map(|p| p.weight).sum();
    assert!((total - 1.0).abs() < 1e-12, "weights sum to {total}");
    assert!(
        grid.mode.rho > -1.0 && grid.mode.rho < -0.5,
        "modal correlation {}",
        grid.mode.rho
    );
}

#[test]
fn many_studies_recover_the_generating_hyperparameters() {
    // 200 studies of 1000/1000 with unit effect variances, rho = -0.4 and
    // both intercepts at 1: enough information that the posterior mode must
    // sit close to the generating values.  The latent draws are moment-
    // matched (exact zero mean, unit variance, exact correlation) so the
    // check measures engine calibration rather than one seed's sampling
    // noise; the binomial layer still adds its own small jitter.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rho: f64 = -0.4;
    let i_n = 200usize;
    let raw: Vec<(f64, f64)> = (0..i_n)
        .map(|_| {
            (
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
            )
        })
        .collect();
    let standardise = |xs: Vec<f64>| -> Vec<f64> {
        let mean = xs.iter().sum::<f64>() / i_n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / i_n as f64;
        xs.iter().map(|x| (x - mean) / var.sqrt()).collect()
    };
    let phi = standardise(raw.iter().map(|r| r.0).collect());
    // Residualise the second coordinate against the first, then rebuild it
    // with exactly the requested correlation.
    let cross = phi
        .iter()
        .zip(raw.iter())
        .map(|(p, r)| p * r.1)
        .sum::<f64>()
        / i_n as f64;
    let resid = standardise(
        raw.iter()
            .zip(&phi)
            .map(|(r, p)| r.1 - cross * p)
            .collect(),
    );
    let mut records = Vec::new();
    for i in 0..i_n {
        let psi = rho * phi[i] + (1.0 - rho * rho).sqrt() * resid[i];
        let p_se = invlogit(1.0 + phi[i]);
        let p_sp = invlogit(1.0 + psi);
        let tp = rng.sample(rand_distr::Binomial::new(1000, p_se).unwrap());
        let tn = rng.sample(rand_distr::Binomial::new(1000, p_sp).unwrap());
        records.push(StudyRecord::new(
            format!("big{i}"),
            tp,
            1000 - tp,
            tn,
            1000 - tn,
        ));
    }
    let ds = Dataset::new(records).unwrap();
    let grid =
        explore_hyperposterior(&ds, &PriorBundle::default(), &InferenceConfig::default()).unwrap();
    assert!(
        (grid.mode.var_phi - 1.0).abs() < 0.1,
        "modal var_phi {}",
        grid.mode.var_phi
    );
    assert!(
        (grid.mode.var_psi - 1.0).abs() < 0.1,
        "modal var_psi {}",
        grid.mode.var_psi
    );
    assert!(
        (grid.mode.rho - rho).abs() < 0.1 * rho.abs(),
        "modal rho {}",
        grid.mode.rho
    );
}

fn scaled_counts(ds: &Dataset, factor: u64) -> Dataset {
    let records = ds
        .studies
        .iter()
        .map(|s| {
            StudyRecord::new(
                s.id.clone(),
                s.true_pos * factor,
                s.false_neg * factor,
                s.true_neg * factor,
                s.false_pos * factor,
            )
        })
        .collect();
    Dataset::new(records).unwrap()
}

#[test]
fn scaling_counts_contracts_the_noise_limited_marginals() {
    // Scaling every count by 100 removes essentially all within-study
    // binomial noise, so the marginals limited by that noise must contract
    // strictly.  The specificity channel of this dataset is the documented
    // exception — and correctly so: its heterogeneity is large enough that
    // at the original counts part of the observed spread is absorbed as
    // binomial noise.  With the noise gone the heterogeneity posterior
    // shifts up (var_psi mean moves from ~3.7 to ~6.1), and sd(nu), which
    // behaves like sd_psi/sqrt(I), grows with it.  The joint information
    // argument pins this: with both intercepts free, their conditional
    // covariance is the effect covariance divided by the study count, so
    // sharper counts cannot shrink sd(nu) below sqrt(E[var_psi]/I).
    let ds = telomerase();
    let config = InferenceConfig::default();
    let priors = PriorBundle::default();
    let base = posterior_marginals(&ds, &priors, &config).unwrap();
    let strong = posterior_marginals(&scaled_counts(&ds, 100), &priors, &config).unwrap();

    for (name, weak, sharp) in [
        ("mu", base.mu.sd, strong.mu.sd),
        ("se", base.se.sd, strong.se.sd),
        ("var_phi", base.var_phi.sd, strong.var_phi.sd),
        ("rho", base.rho.sd, strong.rho.sd),
    ] {
        assert!(
            sharp < weak,
            "{name}: sd {sharp} did not shrink below {weak}"
        );
    }
    // Noise re-attribution on the heterogeneous channel.
    assert!(strong.var_psi.mean > base.var_psi.mean + 1.0);
    assert!(strong.nu.sd > base.nu.sd);
    let floor = (strong.var_psi.mean / ds.studies.len() as f64).sqrt();
    assert!(
        strong.nu.sd > 0.95 * floor,
        "sd(nu) {} fell below the information floor {floor}",
        strong.nu.sd
    );
}

fn swapped_channels(ds: &Dataset) -> Dataset {
    let records = ds
        .studies
        .iter()
        .map(|s| {
            StudyRecord::new(
                s.id.clone(),
                s.true_neg,
                s.false_pos,
                s.true_pos,
                s.false_neg,
            )
        })
        .collect();
    Dataset::new(records).unwrap()
}

fn assert_marginals_close(a: &Marginal, b: &Marginal, tol: f64, what: &str) {
    assert!(
        (a.mean - b.mean).abs() < tol,
        "{what}: means {} vs {}",
        a.mean,
        b.mean
    );
    assert!(
        (a.q500 - b.q500).abs() < tol,
        "{what}: medians {} vs {}",
        a.q500,
        b.q500
    );
    assert!(
        (a.q025 - b.q025).abs() < tol && (a.q975 - b.q975).abs() < tol,
        "{what}: intervals ({}, {}) vs ({}, {})",
        a.q025,
        a.q975,
        b.q025,
        b.q975
    );
}

#[test]
fn swapping_the_channels_swaps_the_laplace_marginals() {
    let ds = telomerase();
    let priors = symmetric_priors();
    let config = InferenceConfig::default();
    let base = posterior_marginals(&ds, &priors, &config).unwrap();
    let flip = posterior_marginals(&swapped_channels(&ds), &priors, &config).unwrap();

    assert_marginals_close(&base.mu, &flip.nu, 1e-2, "mu vs swapped nu");
    assert_marginals_close(&base.nu, &flip.mu, 1e-2, "nu vs swapped mu");
    assert_marginals_close(&base.se, &flip.sp, 1e-2, "se vs swapped sp");
    assert_marginals_close(&base.sp, &flip.se, 1e-2, "sp vs swapped se");
    assert_marginals_close(&base.var_phi, &flip.var_psi, 2e-2, "var_phi vs swapped var_psi");
    assert_marginals_close(&base.var_psi, &flip.var_phi, 2e-2, "var_psi vs swapped var_phi");
    assert_marginals_close(
        &base.rho,
        &flip.rho,
        2e-2,
        "rho unchanged",
    );
}

#[test]
fn swapping_the_channels_swaps_the_chain_marginals() {
    let ds = telomerase();
    let priors = symmetric_priors();
    let config = McmcConfig {
        iterations: 200_000,
        burn_in: 20_000,
        ..McmcConfig::default()
    };
    let base = mcmc_oracle(&ds, &priors, &config).unwrap().summary;
    let flip = mcmc_oracle(&swapped_channels(&ds), &priors, &config)
        .unwrap()
        .summary;

    // Two independent chains: agreement is limited by Monte Carlo error,
    // which is larger for interval endpoints than for centres.
    assert_chain_close(&base.mu, &flip.nu, 0.05, 0.12, "mu vs swapped nu");
    assert_chain_close(&base.nu, &flip.mu, 0.05, 0.12, "nu vs swapped mu");
    assert_chain_close(&base.rho, &flip.rho, 0.06, 0.12, "rho unchanged");
}

fn assert_chain_close(a: &Marginal, b: &Marginal, mean_tol: f64, q_tol: f64, what: &str) {
    assert!(
        (a.mean - b.mean).abs() < mean_tol && (a.q500 - b.q500).abs() < mean_tol,
        "{what}: centres ({}, {}) vs ({}, {})",
        a.mean,
        a.q500,
        b.mean,
        b.q500
    );
    assert!(
        (a.q025 - b.q025).abs() < q_tol && (a.q975 - b.q975).abs() < q_tol,
        "{what}: intervals ({}, {}) vs ({}, {})",
        a.q025,
        a.q975,
        b.q025,
        b.q975
    );
}

#[test]
fn study_order_does_not_move_the_evidence() {
    let ds = telomerase();
    let mut reversed = ds.studies.clone();
    reversed.reverse();
    let reversed = Dataset::new(reversed).unwrap();
    let priors = PriorBundle::default();
    let config = InferenceConfig::default();
    let a = explore_hyperposterior(&ds, &priors, &config).unwrap();
    let b = explore_hyperposterior(&reversed, &priors, &config).unwrap();
    assert!(
        (a.log_marginal_likelihood - b.log_marginal_likelihood).abs() < 1e-6,
        "evidence moved: {} vs {}",
        a.log_marginal_likelihood,
        b.log_marginal_likelihood
    );
}

#[test]
fn prior_only_chain_reproduces_the_correlation_prior() {
    let config = McmcConfig {
        iterations: 400_000,
        burn_in: 40_000,
        include_likelihood: false,
        ..McmcConfig::default()
    };
    let run = mcmc_oracle(&telomerase(), &PriorBundle::default(), &config).unwrap();

    // With the likelihood off the latent pairs still act as pseudo-data for
    // the hyperparameter moves, so the correlation mixes slowly; agreement
    // is asserted to the chain's own Monte Carlo error (via its effective
    // sample size), exactly what a prior-recovery check can promise.
    let ess = run.ess.rho.expect("free correlation").max(1.0);
    let below = run.samples.rho.iter().filter(|&&r| r <= -0.2).count() as f64
        / run.samples.rho.len() as f64;
    // The default correlation prior places mass 0.4 below -0.2.
    let tol = 3.0 * (0.4f64 * 0.6 / ess).sqrt() + 0.005;
    assert!(
        (below - 0.4).abs() < tol,
        "P(rho <= -0.2) sampled as {below} (ess {ess:.0}, tol {tol:.3})"
    );

    let prior = CorrelationPcPrior::pc1();
    for p in [0.1, 0.5, 0.9] {
        let sampled = sample_quantile(&mut run.samples.rho.clone(), p);
        let exact = prior.quantile(p).unwrap();
        let dens = prior.density(exact).unwrap();
        let tol = 3.0 * (p * (1.0 - p) / ess).sqrt() / dens + 0.005;
        assert!(
            (sampled - exact).abs() < tol,
            "prior quantile {p}: sampled {sampled} vs exact {exact} (tol {tol:.3})"
        );
    }
}

#[test]
fn identical_seeds_give_identical_chains() {
    let config = McmcConfig {
        iterations: 30_000,
        burn_in: 5_000,
        seed: 99,
        ..McmcConfig::default()
    };
    let priors = PriorBundle::default();
    let a = mcmc_oracle(&telomerase(), &priors, &config).unwrap();
    let b = mcmc_oracle(&telomerase(), &priors, &config).unwrap();
    assert_eq!(a.samples.mu, b.samples.mu);
    assert_eq!(a.samples.rho, b.samples.rho);
    assert_eq!(a.summary.mu.mean.to_bits(), b.summary.mu.mean.to_bits());
    assert_eq!(
        a.summary.rho.q975.to_bits(),
        b.summary.rho.q975.to_bits()
    );
}

#[test]
fn chain_and_grid_agree_on_a_simulated_dataset() {
    let scenario = metadiag_core::Scenario::new(15, 0.8, 0.7, 1.0, 1.0, -0.4).unwrap();
    let ds = metadiag_core::generate_dataset(&scenario, 20_240_817).unwrap();
    let priors = PriorBundle::default();
    let laplace = posterior_marginals(&ds, &priors, &InferenceConfig::default()).unwrap();
    let chain = mcmc_oracle(
        &ds,
        &priors,
        &McmcConfig {
            iterations: 80_000,
            burn_in: 15_000,
            ..McmcConfig::default()
        },
    )
    .unwrap()
    .summary;

    let latent = [
        ("mu", &laplace.mu, &chain.mu),
        ("nu", &laplace.nu, &chain.nu),
        ("se", &laplace.se, &chain.se),
        ("sp", &laplace.sp, &chain.sp),
    ];
    for (name, a, b) in latent {
        let gap = (a.mean - b.mean).abs() / b.sd;
        assert!(gap < 0.1, "{name}: {} vs {} ({gap:.3} sd)", a.mean, b.mean);
    }
    let hyper = [
        ("var_phi", &laplace.var_phi, &chain.var_phi),
        ("var_psi", &laplace.var_psi, &chain.var_psi),
        (
            "rho",
            &laplace.rho,
            &chain.rho,
        ),
    ];
    for (name, a, b) in hyper {
        let gap = (a.mean - b.mean).abs() / b.sd;
        assert!(gap < 0.3, "{name}: {} vs {} ({gap:.3} sd)", a.mean, b.mean);
    }
}

#[test]
fn summaries_of_known_densities_are_exact() {
    // Standard normal on a wide uniform grid.
    let n = 4001;
    let grid: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
    let dens: Vec<f64> = grid
        .iter()
        .map(|&x| normal_log_pdf(x, 0.0, 1.0).exp())
        .collect();
    let stats = summarize(&grid, &dens).unwrap();
    assert!(stats.mean.abs() < 1e-6);
    assert!((stats.sd - 1.0).abs() < 1e-4);
    assert!((stats.q025 - (-1.959964)).abs() < 1e-3);

    // Unit exponential: median at ln 2.
    let grid: Vec<f64> = (0..n).map(|i| 40.0 * i as f64 / (n - 1) as f64).collect();
    let dens: Vec<f64> = grid.iter().map(|&x| (-x).exp()).collect();
    let stats = summarize(&grid, &dens).unwrap();
    assert!((stats.q500 - std::f64::consts::LN_2).abs() < 1e-4);

    // Default correlation prior tabulated on its unbounded scale, quantiles
    // mapped back to correlations and compared with the inverse CDF.
    let prior = CorrelationPcPrior::pc1();
    let grid: Vec<f64> = (0..24_001)
        .map(|i| -60.0 + 120.0 * i as f64 / 24_000.0)
        .collect();
    let dens: Vec<f64> = grid.iter().map(|&z| prior.density_z(z)).collect();
    let stats = summarize(&grid, &dens).unwrap();
    for (q, p) in [(stats.q025, 0.025), (stats.q500, 0.5), (stats.q975, 0.975)] {
        let rho = (0.5 * q).tanh();
        let exact = prior.quantile(p).unwrap();
        assert!(
            (rho - exact).abs() < 1e-3,
            "quantile {p}: grid {rho} vs exact {exact}"
        );
    }
}
