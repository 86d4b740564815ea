//! Synthetic meta-analysis generator and prior-comparison harness.
//!
//! A [`Scenario`] fixes the generating truth (pooled accuracies, random-effect
//! variances, between-study correlation, number of studies and a shifted-gamma
//! law for study sizes).  [`generate_dataset`] simulates one meta-analysis
//! from it; [`run_scenario`] fits a list of prior configurations to a batch of
//! replicates through a pluggable [`FitEngine`] and accumulates the comparison
//! metrics: per-replicate errors (posterior median minus truth), bias, mean
//! squared error and 95% coverage.
//!
//! MSE is computed as squared bias plus the population variance of the
//! posterior medians, which is algebraically the mean squared error of the
//! medians; [`ScenarioMetrics`] keeps the raw errors so the identity can be
//! re-checked.  Replicates are independent work items: each derives its own
//! stream seed by XOR-ing the base seed with the replicate index, so a run is
//! reproducible regardless of execution order, and fits run in parallel.

use crate::data::{Dataset, StudyRecord};
use crate::error::{Error, Result};
use crate::inference::{
    mcmc_oracle, posterior_marginals, InferenceConfig, McmcConfig, PosteriorSummary,
};
use crate::math::{invlogit, logit};
use crate::model::PriorBundle;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

/// One cell of the simulation design: the generating truth for a batch of
/// synthetic meta-analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scenario {
    /// Number of studies per simulated meta-analysis.
    pub n_studies: usize,
    /// Pooled sensitivity `logit⁻¹(mu)`.
    pub true_se: f64,
    /// Pooled specificity `logit⁻¹(nu)`.
    pub true_sp: f64,
    /// Variance of the sensitivity random effect.
    pub var_phi: f64,
    /// Variance of the specificity random effect.
    pub var_psi: f64,
    /// Between-study correlation of the random effects.
    pub rho: f64,
    /// Shape of the gamma part of the study-size law.
    pub size_shape: f64,
    /// Rate of the gamma part of the study-size law.
    pub size_rate: f64,
    /// Additive shift (and hard floor) of the study-size law.
    pub size_shift: f64,
}

/// Default study-size law: `30 + Gamma(shape 1.2, rate 0.03)`, rounded to the
/// nearest integer.  Median size is about 60 with a long right tail, matching
/// the spread seen in real diagnostic meta-analyses.
pub const DEFAULT_SIZE_LAW: (f64, f64, f64) = (1.2, 0.03, 30.0);

impl Scenario {
    /// Build a scenario with the default study-size law.
    pub fn new(
        n_studies: usize,
        true_se: f64,
        true_sp: f64,
        var_phi: f64,
        var_psi: f64,
        rho: f64,
    ) -> Result<Self> {
        let s = Scenario {
            n_studies,
            true_se,
            true_sp,
            var_phi,
            var_psi,
            rho,
            size_shape: DEFAULT_SIZE_LAW.0,
            size_rate: DEFAULT_SIZE_LAW.1,
            size_shift: DEFAULT_SIZE_LAW.2,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_studies < 2 {
            return Err(Error::Domain(format!(
                "a scenario needs at least 2 studies, got {}",
                self.n_studies
            )));
        }
        for (name, p) in [("true_se", self.true_se), ("true_sp", self.true_sp)] {
            if !(p.is_finite() && p > 0.0 && p < 1.0) {
                return Err(Error::Domain(format!(
                    "{name} must lie in (0, 1), got {p}"
                )));
            }
        }
        if !(self.var_phi > 0.0 && self.var_psi > 0.0) {
            return Err(Error::Domain("scenario variances must be positive".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Domain(format!(
                "scenario correlation must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if !(self.size_shape > 0.0 && self.size_rate > 0.0 && self.size_shift >= 1.0) {
            return Err(Error::Domain(
                "study-size law needs positive shape/rate and shift >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Correlation values cycled through by the built-in design, fastest axis of
/// the scenario numbering.
pub const SCENARIO_CORRELATIONS: [f64; 9] = [-0.95, -0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6];

/// The full 81-scenario design: three accuracy pairs (0.80/0.70, 0.90/0.90,
/// 0.95/0.30) by three study counts (10, 25, 50) by the nine correlations of
/// [`SCENARIO_CORRELATIONS`], unit variances throughout.  Scenario `k`
/// (1-based) is element `k - 1`.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let mut out = Vec::with_capacity(81);
    for &(se, sp) in &[(0.8, 0.7), (0.9, 0.9), (0.95, 0.3)] {
        for &n in &[10usize, 25, 50] {
            for &rho in &SCENARIO_CORRELATIONS {
                out.push(
                    Scenario::new(n, se, sp, 1.0, 1.0, rho)
                        .expect("built-in scenario table is valid"),
                );
            }
        }
    }
    out
}

/// One simulated study, including the latent accuracy pair that generated it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratedStudy {
    /// Total study size.
    pub n: u64,
    /// Diseased subjects (the sensitivity denominator).
    pub diseased: u64,
    /// Study-level `logit(Se_i) = mu + phi_i`.
    pub logit_se: f64,
    /// Study-level `logit(Sp_i) = nu + psi_i`.
    pub logit_sp: f64,
    /// True positives drawn from `Binomial(diseased, Se_i)`.
    pub tp: u64,
    /// True negatives drawn from `Binomial(n - diseased, Sp_i)`.
    pub tn: u64,
}

/// Simulate the studies of one meta-analysis, keeping the latent per-study
/// accuracies alongside the counts (the moment-matching checks need them).
///
/// Study sizes are `shift + Gamma(shape, rate)` rounded to the nearest
/// integer and floored at `shift`; subjects split half/half into diseased and
/// healthy (diseased = `round(n/2)`); the random-effect pair is bivariate
/// normal with the scenario covariance.
pub fn generate_studies(scenario: &Scenario, seed: u64) -> Result<Vec<GeneratedStudy>> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_law = Gamma::new(scenario.size_shape, 1.0 / scenario.size_rate)
        .map_err(|e| Error::Domain(format!("study-size law: {e}")))?;
    let mu = logit(scenario.true_se);
    let nu = logit(scenario.true_sp);
    let sd_phi = scenario.var_phi.sqrt();
    let sd_psi = scenario.var_psi.sqrt();
    let cross = scenario.rho;
    let resid = (1.0 - cross * cross).sqrt();

    let mut out = Vec::with_capacity(scenario.n_studies);
    for _ in 0..scenario.n_studies {
        let raw: f64 = scenario.size_shift + size_law.sample(&mut rng);
        let n = raw.round().max(scenario.size_shift) as u64;
        let diseased = ((n as f64) / 2.0).round() as u64;
        let healthy = n - diseased;

        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let phi = sd_phi * z1;
        let psi = sd_psi * (cross * z1 + resid * z2);
        let logit_se = mu + phi;
        let logit_sp = nu + psi;

        let tp = Binomial::new(diseased, invlogit(logit_se))
            .map_err(|e| Error::Numerical(format!("sensitivity draw: {e}")))?
            .sample(&mut rng);
        let tn = Binomial::new(healthy, invlogit(logit_sp))
            .map_err(|e| Error::Numerical(format!("specificity draw: {e}")))?
            .sample(&mut rng);
        out.push(GeneratedStudy {
            n,
            diseased,
            logit_se,
            logit_sp,
            tp,
            tn,
        });
    }
    Ok(out)
}

/// Simulate one complete meta-analysis dataset from a scenario.
pub fn generate_dataset(scenario: &Scenario, seed: u64) -> Result<Dataset> {
    let studies = generate_studies(scenario, seed)?;
    let records = studies
        .iter()
        .enumerate()
        .map(|(i, s)| {
            StudyRecord::new(
                format!("sim{:03}", i + 1),
                s.tp,
                s.diseased - s.tp,
                s.tn,
                (s.n - s.diseased) - s.tn,
            )
        })
        .collect();
    Dataset::new(records)
}

/// The quantities tracked by the comparison metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Parameter {
    Mu,
    Nu,
    Se,
    Sp,
    VarPhi,
    VarPsi,
    Rho,
}

impl Parameter {
    pub const ALL: [Parameter; 7] = [
        Parameter::Mu,
        Parameter::Nu,
        Parameter::Se,
        Parameter::Sp,
        Parameter::VarPhi,
        Parameter::VarPsi,
        Parameter::Rho,
    ];

    /// Stable lower-case label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            Parameter::Mu => "mu",
            Parameter::Nu => "nu",
            Parameter::Se => "se",
            Parameter::Sp => "sp",
            Parameter::VarPhi => "var_phi",
            Parameter::VarPsi => "var_psi",
            Parameter::Rho => "rho",
        }
    }

    /// The generating truth of this quantity under a scenario.
    pub fn truth(self, scenario: &Scenario) -> f64 {
        match self {
            Parameter::Mu => logit(scenario.true_se),
            Parameter::Nu => logit(scenario.true_sp),
            Parameter::Se => scenario.true_se,
            Parameter::Sp => scenario.true_sp,
            Parameter::VarPhi => scenario.var_phi,
            Parameter::VarPsi => scenario.var_psi,
            Parameter::Rho => scenario.rho,
        }
    }

    fn summary(self, fit: &PosteriorSummary) -> (f64, f64, f64) {
        let m = match self {
            Parameter::Mu => &fit.mu,
            Parameter::Nu => &fit.nu,
            Parameter::Se => &fit.se,
            Parameter::Sp => &fit.sp,
            Parameter::VarPhi => &fit.var_phi,
            Parameter::VarPsi => &fit.var_psi,
            Parameter::Rho => &fit.rho,
        };
        (m.q500, m.q025, m.q975)
    }
}

/// A fitting backend the harness can drive.  Implementations must be safe to
/// call from parallel workers.
pub trait FitEngine: Sync {
    fn name(&self) -> &str;
    /// Fit one dataset under one prior configuration.  `seed` only matters
    /// for stochastic engines.
    fn fit(&self, dataset: &Dataset, priors: &PriorBundle, seed: u64) -> Result<PosteriorSummary>;
}

/// The deterministic Laplace-plus-grid engine.
#[derive(Debug, Clone, Default)]
pub struct LaplaceEngine {
    pub config: InferenceConfig,
}

impl FitEngine for LaplaceEngine {
    fn name(&self) -> &str {
        "laplace"
    }

    fn fit(&self, dataset: &Dataset, priors: &PriorBundle, _seed: u64) -> Result<PosteriorSummary> {
        posterior_marginals(dataset, priors, &self.config)
    }
}

/// The MCMC reference engine; `seed` reseeds each fit's chain.
#[derive(Debug, Clone, Default)]
pub struct McmcEngine {
    pub config: McmcConfig,
}

impl FitEngine for McmcEngine {
    fn name(&self) -> &str {
        "mcmc"
    }

    fn fit(&self, dataset: &Dataset, priors: &PriorBundle, seed: u64) -> Result<PosteriorSummary> {
        let mut config = self.config.clone();
        config.seed = seed;
        Ok(mcmc_oracle(dataset, priors, &config)?.summary)
    }
}

/// A prior configuration with the name used in reports.
#[derive(Debug, Clone, Serialize)]
pub struct NamedPriors {
    pub name: String,
    pub priors: PriorBundle,
}

impl NamedPriors {
    pub fn new(name: impl Into<String>, priors: PriorBundle) -> Self {
        NamedPriors {
            name: name.into(),
            priors,
        }
    }
}

/// Point estimate and interval for one parameter of one replicate fit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReplicateRecord {
    /// Replicate index, 0-based.
    pub replicate: usize,
    pub parameter: Parameter,
    pub truth: f64,
    /// Posterior median, the point estimate the error is measured from.
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl ReplicateRecord {
    pub fn error(&self) -> f64 {
        self.median - self.truth
    }

    pub fn covered(&self) -> bool {
        self.lower95 <= self.truth && self.truth <= self.upper95
    }
}

/// Error/bias/MSE/coverage accumulators for one parameter.
#[derive(Debug, Clone, Serialize)]
pub struct ParameterMetrics {
    pub parameter: Parameter,
    /// Per-replicate `median - truth`, successful replicates only.
    pub errors: Vec<f64>,
    /// Mean error.
    pub bias: f64,
    /// Squared bias plus population variance of the posterior medians.
    pub mse: f64,
    /// Fraction of replicates whose 95% interval contains the truth.
    pub coverage95: f64,
}

/// Comparison metrics for one (scenario, prior) pair.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioMetrics {
    pub per_parameter: Vec<ParameterMetrics>,
    /// Replicates that produced a fit.
    pub n_replicates: usize,
    /// Replicates whose fit errored (excluded from the metrics).
    pub n_failures: usize,
}

impl ScenarioMetrics {
    pub fn parameter(&self, p: Parameter) -> &ParameterMetrics {
        self.per_parameter
            .iter()
            .find(|m| m.parameter == p)
            .expect("all tracked parameters are present")
    }
}

/// Everything recorded for one (scenario, prior) pair: raw per-replicate
/// records plus the aggregated metrics.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioRun {
    pub prior_name: String,
    pub records: Vec<ReplicateRecord>,
    pub metrics: ScenarioMetrics,
    /// `(replicate, message)` for every failed fit.
    pub failures: Vec<(usize, String)>,
}

/// Aggregate per-replicate records into the comparison metrics.
///
/// `n_failures` only annotates the output; the records passed in are assumed
/// to be the successful replicates.
pub fn metrics_from_records(
    scenario: &Scenario,
    records: &[ReplicateRecord],
    n_failures: usize,
) -> ScenarioMetrics {
    let mut per_parameter = Vec::with_capacity(Parameter::ALL.len());
    let mut n_replicates = 0usize;
    for p in Parameter::ALL {
        let rows: Vec<&ReplicateRecord> =
            records.iter().filter(|r| r.parameter == p).collect();
        n_replicates = n_replicates.max(rows.len());
        let errors: Vec<f64> = rows.iter().map(|r| r.error()).collect();
        let n = errors.len().max(1) as f64;
        let bias = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / n;
        let mse = bias * bias + var;
        let coverage95 = rows.iter().filter(|r| r.covered()).count() as f64 / n;
        let _ = scenario;
        per_parameter.push(ParameterMetrics {
            parameter: p,
            errors,
            bias,
            mse,
            coverage95,
        });
    }
    ScenarioMetrics {
        per_parameter,
        n_replicates,
        n_failures,
    }
}

/// Fit every prior configuration to every replicate of a scenario and return
/// one [`ScenarioRun`] per prior (in input order).
///
/// Replicate `r` simulates its dataset from `seed ^ r`, and stochastic
/// engines are reseeded per (replicate, prior); failures are recorded and
/// excluded rather than aborting the batch.
pub fn run_scenario(
    scenario: &Scenario,
    priors: &[NamedPriors],
    engine: &dyn FitEngine,
    n_replicates: usize,
    seed: u64,
) -> Result<Vec<ScenarioRun>> {
    scenario.validate()?;
    if n_replicates == 0 {
        return Err(Error::Domain("n_replicates must be at least 1".into()));
    }
    if priors.is_empty() {
        return Err(Error::Domain("at least one prior configuration is required".into()));
    }
    for np in priors {
        np.priors.validate()?;
    }

    // One work item per replicate: simulate once, fit under every prior so
    // the comparison is paired.
    type RepOutcome = Vec<std::result::Result<Vec<ReplicateRecord>, String>>;
    let outcomes: Vec<RepOutcome> = (0..n_replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = seed ^ rep as u64;
            let dataset = match generate_dataset(scenario, rep_seed) {
                Ok(d) => d,
                Err(e) => {
                    return priors
                        .iter()
                        .map(|_| Err(format!("simulation failed: {e}")))
                        .collect()
                }
            };
            priors
                .iter()
                .enumerate()
                .map(|(pi, np)| {
                    let fit_seed = rep_seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(pi as u64 + 1));
                    match engine.fit(&dataset, &np.priors, fit_seed) {
                        Ok(fit) => Ok(Parameter::ALL
                            .iter()
                            .map(|&p| {
                                let (median, lower95, upper95) = p.summary(&fit);
                                ReplicateRecord {
                                    replicate: rep,
                                    parameter: p,
                                    truth: p.truth(scenario),
                                    median,
                                    lower95,
                                    upper95,
                                }
                            })
                            .collect()),
                        Err(e) => Err(e.to_string()),
                    }
                })
                .collect()
        })
        .collect();

    let mut runs = Vec::with_capacity(priors.len());
    for (pi, np) in priors.iter().enumerate() {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (rep, outcome) in outcomes.iter().enumerate() {
            match &outcome[pi] {
                Ok(rows) => records.extend_from_slice(rows),
                Err(msg) => failures.push((rep, msg.clone())),
            }
        }
        let metrics = metrics_from_records(scenario, &records, failures.len());
        runs.push(ScenarioRun {
            prior_name: np.name.clone(),
            records,
            metrics,
            failures,
        });
    }
    Ok(runs)
}

/// Render the per-replicate records of one run as CSV (header included).
/// Rows are ordered by replicate then by the fixed parameter order, so equal
/// seeds give byte-identical bodies.
pub fn replicate_csv(run: &ScenarioRun) -> String {
    let mut out = String::from("replicate,parameter,truth,median,lower95,upper95,error,covered\n");
    for r in &run.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.replicate,
            r.parameter.label(),
            r.truth,
            r.median,
            r.lower95,
            r.upper95,
            r.error(),
            u8::from(r.covered()),
        ));
    }
    out
}

/// Render aggregate metrics rows for a set of labelled runs as CSV.  Each
/// entry is `(scenario_id, run)`; ids are whatever labelling the caller uses
/// (the built-in design numbers scenarios from 1).
pub fn metrics_csv(runs: &[(usize, &ScenarioRun)]) -> String {
    let mut out =
        String::from("scenario,prior,parameter,n_replicates,n_failures,bias,mse,coverage95\n");
    for (id, run) in runs {
        for m in &run.metrics.per_parameter {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                id,
                run.prior_name,
                m.parameter.label(),
                run.metrics.n_replicates,
                run.metrics.n_failures,
                m.bias,
                m.mse,
                m.coverage95,
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Marginal;
    use crate::math::mean_and_variance;

    #[test]
    fn builtin_table_matches_the_design() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 81);
        // Scenario 28 opens the second accuracy block.
        let s28 = &all[27];
        assert_eq!(s28.true_se, 0.9);
        assert_eq!(s28.true_sp, 0.9);
        assert_eq!(s28.n_studies, 10);
        assert_eq!(s28.rho, -0.95);
        // Scenario 81 closes the design.
        let s81 = &all[80];
        assert_eq!(s81.true_se, 0.95);
        assert_eq!(s81.true_sp, 0.3);
        assert_eq!(s81.n_studies, 50);
        assert_eq!(s81.rho, 0.6);
        // Correlation cycles fastest; study count next.
        for block in 0..9 {
            for (k, &rho) in SCENARIO_CORRELATIONS.iter().enumerate() {
                assert_eq!(all[9 * block + k].rho, rho);
            }
        }
        assert_eq!(all[9].n_studies, 25);
        assert_eq!(all[18].n_studies, 50);
        for s in &all {
            assert_eq!((s.var_phi, s.var_psi), (1.0, 1.0));
            s.validate().unwrap();
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, -0.6).unwrap();
        let a = generate_dataset(&sc, 42).unwrap();
        let b = generate_dataset(&sc, 42).unwrap();
        assert_eq!(a.studies, b.studies);
        let c = generate_dataset(&sc, 43).unwrap();
        assert_ne!(a.studies, c.studies);
    }

    #[test]
    fn independent_effects_are_empirically_uncorrelated() {
        let mut sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, 0.0).unwrap();
        sc.n_studies = 100_000;
        let studies = generate_studies(&sc, 7).unwrap();
        let se: Vec<f64> = studies.iter().map(|s| s.logit_se).collect();
        let sp: Vec<f64> = studies.iter().map(|s| s.logit_sp).collect();
        let (m_se, v_se) = mean_and_variance(&se);
        let (m_sp, v_sp) = mean_and_variance(&sp);
        let cov = se
            .iter()
            .zip(&sp)
            .map(|(a, b)| (a - m_se) * (b - m_sp))
            .sum::<f64>()
            / se.len() as f64;
        let corr = cov / (v_se * v_sp).sqrt();
        assert!(corr.abs() < 0.01, "empirical correlation {corr}");
    }

    #[test]
    fn generator_moments_match_the_scenario() {
        let mut sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, -0.6).unwrap();
        sc.n_studies = 100_000;
        let studies = generate_studies(&sc, 11).unwrap();
        let se: Vec<f64> = studies.iter().map(|s| s.logit_se).collect();
        let sp: Vec<f64> = studies.iter().map(|s| s.logit_sp).collect();
        let (m_se, v_se) = mean_and_variance(&se);
        let (m_sp, v_sp) = mean_and_variance(&sp);
        let cov = se
            .iter()
            .zip(&sp)
            .map(|(a, b)| (a - m_se) * (b - m_sp))
            .sum::<f64>()
            / se.len() as f64;
        assert!((m_se - logit(0.8)).abs() < 0.02);
        assert!((m_sp - logit(0.7)).abs() < 0.02);
        assert!((v_se - 1.0).abs() < 0.02);
        assert!((v_sp - 1.0).abs() < 0.02);
        assert!((cov / (v_se * v_sp).sqrt() + 0.6).abs() < 0.01);

        // Study sizes respect the floor and central counts are split evenly.
        for s in &studies {
            assert!(s.n >= 30);
            assert!(s.diseased == s.n / 2 || s.diseased == s.n - s.n / 2);
            assert!(s.tp <= s.diseased && s.tn <= s.n - s.diseased);
        }
    }

    /// Degenerate engine answering with the truth: the harness must report
    /// zero bias, zero MSE and full coverage.
    struct TruthEngine;

    impl FitEngine for TruthEngine {
        fn name(&self) -> &str {
            "truth"
        }

        fn fit(
            &self,
            _dataset: &Dataset,
            _priors: &PriorBundle,
            _seed: u64,
        ) -> Result<PosteriorSummary> {
            let sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, -0.4).unwrap();
            let point = |p: Parameter| -> Marginal {
                let v = p.truth(&sc);
                Marginal {
                    mean: v,
                    sd: 0.0,
                    q025: v,
                    q500: v,
                    q975: v,
                    grid: vec![v],
                    density: Vec::new(),
                }
            };
            Ok(PosteriorSummary {
                mu: point(Parameter::Mu),
                nu: point(Parameter::Nu),
                se: point(Parameter::Se),
                sp: point(Parameter::Sp),
                var_phi: point(Parameter::VarPhi),
                var_psi: point(Parameter::VarPsi),
                rho: point(Parameter::Rho),
                mu_nu_correlation: 0.0,
                marginal_log_likelihood: None,
                warnings: Vec::new(),
            })
        }
    }

    #[test]
    fn truth_engine_scores_perfectly() {
        let sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, -0.4).unwrap();
        let priors = [NamedPriors::new("default", PriorBundle::default())];
        let runs = run_scenario(&sc, &priors, &TruthEngine, 5, 123).unwrap();
        assert_eq!(runs.len(), 1);
        let run = &runs[0];
        assert_eq!(run.metrics.n_replicates, 5);
        assert_eq!(run.metrics.n_failures, 0);
        for m in &run.metrics.per_parameter {
            assert_eq!(m.bias, 0.0);
            assert_eq!(m.mse, 0.0);
            assert_eq!(m.coverage95, 1.0);
            assert_eq!(m.errors.len(), 5);
        }
    }

    /// Engine that fails on a fixed replicate's dataset, to exercise the
    /// failure bookkeeping.
    struct FlakyEngine;

    impl FitEngine for FlakyEngine {
        fn name(&self) -> &str {
            "flaky"
        }

        fn fit(
            &self,
            dataset: &Dataset,
            priors: &PriorBundle,
            seed: u64,
        ) -> Result<PosteriorSummary> {
            if dataset.studies[0].true_pos % 2 == 0 {
                return Err(Error::Numerical("synthetic failure".into()));
            }
            TruthEngine.fit(dataset, priors, seed)
        }
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        let sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, -0.4).unwrap();
        let priors = [NamedPriors::new("default", PriorBundle::default())];
        let runs = run_scenario(&sc, &priors, &FlakyEngine, 12, 9).unwrap();
        let run = &runs[0];
        assert!(run.metrics.n_failures > 0, "expected some synthetic failures");
        assert_eq!(run.metrics.n_failures, run.failures.len());
        assert_eq!(
            run.metrics.n_replicates + run.metrics.n_failures,
            12,
            "successes and failures partition the replicates"
        );
        for m in &run.metrics.per_parameter {
            assert_eq!(m.errors.len(), run.metrics.n_replicates);
        }
    }

    #[test]
    fn mse_identity_holds_exactly() {
        // Hand-built records with known spread.
        let sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, 0.2).unwrap();
        let mut records = Vec::new();
        for (rep, offset) in [(0usize, -0.3), (1, 0.1), (2, 0.5)] {
            for p in Parameter::ALL {
                let truth = p.truth(&sc);
                records.push(ReplicateRecord {
                    replicate: rep,
                    parameter: p,
                    truth,
                    median: truth + offset,
                    lower95: truth + offset - 1.0,
                    upper95: truth + offset + 1.0,
                });
            }
        }
        let metrics = metrics_from_records(&sc, &records, 0);
        for m in &metrics.per_parameter {
            let n = m.errors.len() as f64;
            let bias = m.errors.iter().sum::<f64>() / n;
            let var = m.errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / n;
            assert!((m.mse - (bias * bias + var)).abs() < 1e-10);
            assert!((m.bias - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_bodies_are_stable() {
        let sc = Scenario::new(10, 0.8, 0.7, 1.0, 1.0, -0.4).unwrap();
        let priors = [NamedPriors::new("default", PriorBundle::default())];
        let a = run_scenario(&sc, &priors, &TruthEngine, 3, 5).unwrap();
        let b = run_scenario(&sc, &priors, &TruthEngine, 3, 5).unwrap();
        assert_eq!(replicate_csv(&a[0]), replicate_csv(&b[0]));
        let csv = replicate_csv(&a[0]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "replicate,parameter,truth,median,lower95,upper95,error,covered"
        );
        assert_eq!(csv.lines().count(), 1 + 3 * Parameter::ALL.len());
        let agg = metrics_csv(&[(6, &a[0])]);
        assert!(agg.starts_with("scenario,prior,parameter,"));
        assert!(agg.contains("6,default,rho,3,0,"));
    }
}
