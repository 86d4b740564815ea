//! Bivariate random-effects meta-analysis of diagnostic accuracy studies.
//!
//! Study-level true/false positive/negative counts are modelled with a pair of
//! binomial likelihoods whose logit-scale probabilities carry correlated
//! Gaussian random effects.  Between-study heterogeneity is controlled through
//! penalised complexity priors on the random-effect variances and on the
//! correlation, built from the Kullback-Leibler distance to a base model.
//!
//! Two inference engines are provided: a deterministic one that combines
//! Laplace approximations of the latent field with numerical integration over
//! a hyperparameter grid, and an adaptive random-walk MCMC sampler used as a
//! reference oracle.  A simulation harness and summary ROC geometry round out
//! the crate; the `metadiag` binary in the companion CLI crate drives all of
//! it from the command line.

pub mod data;
pub mod error;
pub mod inference;
pub mod math;
pub mod model;
pub mod priors;
pub mod quadrature;
pub mod simulation;
pub mod sroc;

pub use data::{parse_dataset_csv, telomerase, CsvOptions, Dataset, StudyRecord};
pub use error::{Error, Result};
pub use inference::{
    explore_hyperposterior, laplace_fit, marginals_from_grid, mcmc_oracle, posterior_marginals,
    summarize, GaussianApprox, HyperGrid, InferenceConfig, Marginal, McmcConfig, McmcRun,
    PosteriorSummary, SummaryStats,
};
pub use model::{Hyperparameters, LatentField, LatentLayout, PriorBundle};
pub use priors::{
    solve_rates, ComparisonPrior, CorrelationPcPrior, CorrelationPrior, PcContrasts, PcStrategy,
    VariancePcPrior, VariancePrior,
};
pub use simulation::{
    builtin_scenarios, generate_dataset, run_scenario, FitEngine, LaplaceEngine, McmcEngine,
    NamedPriors, Parameter, Scenario, ScenarioMetrics, ScenarioRun,
};
pub use sroc::{sroc_geometry, SrocGeometry};
