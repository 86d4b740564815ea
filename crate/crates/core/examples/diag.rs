use metadiag_core::*;

fn main() {
    let ds = telomerase();
    let priors = PriorBundle::default();
    let config = InferenceConfig::default();
    let mut rev = ds.studies.clone();
    rev.reverse();
    let rev = Dataset::new(rev).unwrap();
    let a = explore_hyperposterior(&ds, &priors, &config).unwrap();
    let b = explore_hyperposterior(&rev, &priors, &config).unwrap();
    println!("points: {} vs {}  mlik diff {:.3e}", a.points.len(), b.points.len(),
        a.log_marginal_likelihood - b.log_marginal_likelihood);

    let priors_ref = PriorBundle { intercept_variance: 1000.0, ..PriorBundle::default() };
    let s = posterior_marginals(&ds, &priors_ref, &config).unwrap();
    println!("mu {:.4} nu {:.4} se {:.4} sp {:.4} vphi {:.4} vpsi {:.4}",
        s.mu.mean, s.nu.mean, s.se.mean, s.sp.mean, s.var_phi.mean, s.var_psi.mean);
    println!("rho mean {:.4} q025 {:.4} q975 {:.4} mlik {:.4}",
        s.rho.mean, s.rho.q025, s.rho.q975, s.marginal_log_likelihood.unwrap());
}
