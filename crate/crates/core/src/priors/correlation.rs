//! Penalised complexity prior for the between-study correlation.
//!
//! The prior is built on the Kullback-Leibler divergence between the
//! bivariate Gaussian random-effect distribution with correlation `rho` and a
//! base model with correlation `rho0`.  On the distance scale
//! `d(rho) = sqrt(2 KLD(rho))` an exponential density with side-specific rate
//! shrinks towards the base value; densities on the correlation scale follow
//! by the change of variables through `|dd/drho|`.
//!
//! The two rates and the mass `omega1` left of the base value are pinned down
//! by probability contrasts the user chooses: the mass of the left tail, the
//! mass of the right tail, or both (in which case `omega1` itself is solved
//! from the continuity condition `omega1 lambda1 = (1 - omega1) lambda2`).
//!
//! All inference-facing evaluations run on the unbounded scale
//! `z = log((1+rho)/(1-rho))`, where the density has no endpoint
//! singularities; `1 - rho^2` and its logarithm are computed from `z`
//! directly, so the far tails (|rho| within one ulp of 1) stay accurate.

use crate::error::{Error, Result};
use crate::math::log1p_exp;
use rand::Rng;
use serde::Serialize;

const LN_4: f64 = 1.386_294_361_119_890_6;

/// How the exponential rates are pinned down from probability contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PcStrategy {
    /// Given `omega1`, fix the left-tail contrast `P(rho < u_min) = alpha1`.
    LowerTail,
    /// Given `omega1`, fix the right-tail contrast `P(rho > u_max) = alpha2`.
    UpperTail,
    /// Fix both tail contrasts and solve for `omega1`.
    BothTails,
}

impl PcStrategy {
    /// Numeric label used in prior specification strings.
    pub fn index(self) -> u8 {
        match self {
            PcStrategy::LowerTail => 1,
            PcStrategy::UpperTail => 2,
            PcStrategy::BothTails => 3,
        }
    }

    /// Inverse of [`PcStrategy::index`].
    pub fn from_index(k: u8) -> Result<Self> {
        match k {
            1 => Ok(PcStrategy::LowerTail),
            2 => Ok(PcStrategy::UpperTail),
            3 => Ok(PcStrategy::BothTails),
            other => Err(Error::InvalidPrior(format!(
                "strategy must be 1, 2 or 3, got {other}"
            ))),
        }
    }
}

/// User-chosen probability contrasts; which fields are required depends on
/// the strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PcContrasts {
    /// Prior mass below the base correlation (strategies 1 and 2).
    pub omega1: Option<f64>,
    /// Left reference value `u_min < rho0` (strategies 1 and 3).
    pub u_min: Option<f64>,
    /// Left tail mass `P(rho < u_min) = alpha1` (strategies 1 and 3).
    pub alpha1: Option<f64>,
    /// Right reference value `u_max > rho0` (strategies 2 and 3).
    pub u_max: Option<f64>,
    /// Right tail mass `P(rho > u_max) = alpha2` (strategies 2 and 3).
    pub alpha2: Option<f64>,
}

/// Rates and left mass produced by [`solve_rates`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolvedRates {
    pub lambda1: f64,
    pub lambda2: f64,
    pub omega1: f64,
}

fn check_rho0(rho0: f64) -> Result<()> {
    if !rho0.is_finite() || rho0 <= -1.0 || rho0 >= 1.0 {
        return Err(Error::Domain(format!(
            "base correlation must lie in (-1, 1), got {rho0}"
        )));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho <= -1.0 || rho >= 1.0 {
        return Err(Error::Domain(format!(
            "correlation must lie in (-1, 1), got {rho}"
        )));
    }
    Ok(())
}

/// Kullback-Leibler divergence between the correlated bivariate Gaussian with
/// correlation `rho` and the base model with correlation `rho0` (unit
/// variances; the divergence does not depend on them).
///
/// Non-negative, zero exactly at `rho = rho0`; tiny negative floating-point
/// results near the base value are clamped to zero.
pub fn kld_correlation(rho: f64, rho0: f64) -> Result<f64> {
    check_rho(rho)?;
    check_rho0(rho0)?;
    let s = (1.0 - rho) * (1.0 + rho);
    let s0 = (1.0 - rho0) * (1.0 + rho0);
    let kld = (1.0 - rho0 * rho) / s0 - 1.0 - 0.5 * s.ln() + 0.5 * s0.ln();
    Ok(kld.max(0.0))
}

/// Distance scale `d(rho) = sqrt(2 KLD(rho))`: the metric the exponential
/// penalty lives on.  Strictly decreasing below `rho0`, strictly increasing
/// above, unbounded at both endpoints.
pub fn distance_correlation(rho: f64, rho0: f64) -> Result<f64> {
    Ok((2.0 * kld_correlation(rho, rho0)?).sqrt())
}

/// Derivative of the distance in the correlation, via a series expansion at
/// the base value where the direct ratio degenerates to 0/0.
///
/// Returns `|dd/drho|`.
fn ddist_drho_abs(rho: f64, rho0: f64) -> f64 {
    let t = rho - rho0;
    if t.abs() < 1e-6 {
        return jacobian_series(t, rho0);
    }
    let s = (1.0 - rho) * (1.0 + rho);
    let s0 = (1.0 - rho0) * (1.0 + rho0);
    let kprime = rho / s - rho0 / s0;
    let kld = (1.0 - rho0 * rho) / s0 - 1.0 - 0.5 * s.ln() + 0.5 * s0.ln();
    kprime.abs() / (2.0 * kld.max(0.0)).sqrt()
}

/// Leading terms of `|dd/drho|` around `rho0`: with `K2 = KLD''(rho0)` and
/// `K3 = KLD'''(rho0)`, `|dd/drho| = sqrt(K2) (1 + K3 t / (3 K2)) + O(t^2)`.
fn jacobian_series(t: f64, rho0: f64) -> f64 {
    let s0 = (1.0 - rho0) * (1.0 + rho0);
    let k2 = (1.0 + rho0 * rho0) / (s0 * s0);
    let k3 = 2.0 * rho0 * (3.0 + rho0 * rho0) / (s0 * s0 * s0);
    k2.sqrt() * (1.0 + k3 * t / (3.0 * k2))
}

/// Solve the side rates from the requested contrasts.
///
/// Strategy 3 reduces to a one-dimensional root find for `omega1` in
/// `(alpha1, 1 - alpha2)`: both endpoints push one rate to zero, so the
/// continuity residual `omega1 lambda1 - (1 - omega1) lambda2` brackets a
/// sign change, which bisection pins down to machine-level accuracy.
pub fn solve_rates(rho0: f64, strategy: PcStrategy, c: &PcContrasts) -> Result<SolvedRates> {
    check_rho0(rho0)?;
    let prob = |name: &str, v: Option<f64>| -> Result<f64> {
        let v = v.ok_or_else(|| {
            Error::InvalidPrior(format!("strategy {} needs `{name}`", strategy.index()))
        })?;
        if !(v.is_finite() && v > 0.0 && v < 1.0) {
            return Err(Error::InvalidPrior(format!(
                "`{name}` must lie in (0, 1), got {v}"
            )));
        }
        Ok(v)
    };
    let reference = |name: &str, v: Option<f64>| -> Result<f64> {
        let v = v.ok_or_else(|| {
            Error::InvalidPrior(format!("strategy {} needs `{name}`", strategy.index()))
        })?;
        check_rho(v)?;
        Ok(v)
    };

    match strategy {
        PcStrategy::LowerTail => {
            let omega1 = prob("omega1", c.omega1)?;
            let u_min = reference("umin", c.u_min)?;
            let alpha1 = prob("alpha1", c.alpha1)?;
            if u_min >= rho0 {
                return Err(Error::InvalidPrior(format!(
                    "umin must lie below rho0 = {rho0}, got {u_min}"
                )));
            }
            if alpha1 >= omega1 {
                return Err(Error::InvalidPrior(format!(
                    "alpha1 = {alpha1} must be smaller than omega1 = {omega1}"
                )));
            }
            let d = distance_correlation(u_min, rho0)?;
            let lambda1 = (omega1.ln() - alpha1.ln()) / d;
            let lambda2 = omega1 * lambda1 / (1.0 - omega1);
            Ok(SolvedRates {
                lambda1,
                lambda2,
                omega1,
            })
        }
        PcStrategy::UpperTail => {
            let omega1 = prob("omega1", c.omega1)?;
            let u_max = reference("umax", c.u_max)?;
            let alpha2 = prob("alpha2", c.alpha2)?;
            if u_max <= rho0 {
                return Err(Error::InvalidPrior(format!(
                    "umax must lie above rho0 = {rho0}, got {u_max}"
                )));
            }
            if alpha2 >= 1.0 - omega1 {
                return Err(Error::InvalidPrior(format!(
                    "alpha2 = {alpha2} must be smaller than 1 - omega1 = {}",
                    1.0 - omega1
                )));
            }
            let d = distance_correlation(u_max, rho0)?;
            let lambda2 = ((1.0 - omega1).ln() - alpha2.ln()) / d;
            let lambda1 = (1.0 - omega1) * lambda2 / omega1;
            Ok(SolvedRates {
                lambda1,
                lambda2,
                omega1,
            })
        }
        PcStrategy::BothTails => {
            let u_min = reference("umin", c.u_min)?;
            let alpha1 = prob("alpha1", c.alpha1)?;
            let u_max = reference("umax", c.u_max)?;
            let alpha2 = prob("alpha2", c.alpha2)?;
            if u_min >= rho0 || u_max <= rho0 {
                return Err(Error::InvalidPrior(format!(
                    "need umin < rho0 < umax, got umin = {u_min}, rho0 = {rho0}, umax = {u_max}"
                )));
            }
            if alpha1 + alpha2 >= 1.0 {
                return Err(Error::InvalidPrior(format!(
                    "tail masses must satisfy alpha1 + alpha2 < 1, got {alpha1} + {alpha2}"
                )));
            }
            let d1 = distance_correlation(u_min, rho0)?;
            let d2 = distance_correlation(u_max, rho0)?;
            let lam1 = |w: f64| (w.ln() - alpha1.ln()) / d1;
            let lam2 = |w: f64| ((1.0 - w).ln() - alpha2.ln()) / d2;
            let residual = |w: f64| w * lam1(w) - (1.0 - w) * lam2(w);

            let mut lo = alpha1 + 1e-12 * (1.0 - alpha2 - alpha1);
            let mut hi = (1.0 - alpha2) - 1e-12 * (1.0 - alpha2 - alpha1);
            let (r_lo, r_hi) = (residual(lo), residual(hi));
            if !(r_lo < 0.0 && r_hi > 0.0) {
                return Err(Error::InvalidPrior(format!(
                    "no omega1 in ({alpha1}, {}) balances the contrasts: \
                     residuals {r_lo:.3e} and {r_hi:.3e}",
                    1.0 - alpha2
                )));
            }
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                if residual(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let omega1 = 0.5 * (lo + hi);
            Ok(SolvedRates {
                lambda1: lam1(omega1),
                lambda2: lam2(omega1),
                omega1,
            })
        }
    }
}

/// The fitted two-sided penalised complexity prior on a correlation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationPcPrior {
    /// Base correlation the prior shrinks towards.
    pub rho0: f64,
    /// Exponential rate on the distance scale, below the base value.
    pub lambda1: f64,
    /// Exponential rate on the distance scale, above the base value.
    pub lambda2: f64,
    /// Prior mass below the base value.
    pub omega1: f64,
    /// How the rates were identified.
    pub strategy: PcStrategy,
    /// The contrasts that identified them.
    pub contrasts: PcContrasts,
    /// Base value on the unbounded scale, `log((1+rho0)/(1-rho0))`.
    z0: f64,
}

impl CorrelationPcPrior {
    /// Build the prior by solving the rates from the given contrasts.
    pub fn build(rho0: f64, strategy: PcStrategy, contrasts: PcContrasts) -> Result<Self> {
        let rates = solve_rates(rho0, strategy, &contrasts)?;
        if !(rates.lambda1.is_finite()
            && rates.lambda2.is_finite()
            && rates.lambda1 > 0.0
            && rates.lambda2 > 0.0)
        {
            return Err(Error::InvalidPrior(format!(
                "solved rates are not positive and finite: lambda1 = {}, lambda2 = {}",
                rates.lambda1, rates.lambda2
            )));
        }
        Ok(CorrelationPcPrior {
            rho0,
            lambda1: rates.lambda1,
            lambda2: rates.lambda2,
            omega1: rates.omega1,
            strategy,
            contrasts,
            z0: 2.0 * rho0.atanh(),
        })
    }

    /// Symmetric default: base value 0, equal mass on both sides,
    /// `P(rho < -0.9) = 0.1`.
    pub fn pc0() -> Self {
        CorrelationPcPrior::build(
            0.0,
            PcStrategy::LowerTail,
            PcContrasts {
                omega1: Some(0.5),
                u_min: Some(-0.9),
                alpha1: Some(0.1),
                ..Default::default()
            },
        )
        .expect("built-in prior is valid")
    }

    /// Weakly informative default for diagnostic meta-analysis: base value
    /// -0.2, 40% mass below it, `P(rho < -0.95) = 0.05`.
    pub fn pc1() -> Self {
        CorrelationPcPrior::build(
            -0.2,
            PcStrategy::LowerTail,
            PcContrasts {
                omega1: Some(0.4),
                u_min: Some(-0.95),
                alpha1: Some(0.05),
                ..Default::default()
            },
        )
        .expect("built-in prior is valid")
    }

    /// Two-sided variant: base value -0.2 with 5% tails below -0.9 and above
    /// 0.8; the left mass follows from continuity.
    pub fn pc2() -> Self {
        CorrelationPcPrior::build(
            -0.2,
            PcStrategy::BothTails,
            PcContrasts {
                u_min: Some(-0.9),
                alpha1: Some(0.05),
                u_max: Some(0.8),
                alpha2: Some(0.05),
                ..Default::default()
            },
        )
        .expect("built-in prior is valid")
    }

    /// Right-anchored variant: base value -0.2, 60% mass below it,
    /// `P(rho > 0.4) = 0.05`.
    pub fn pc3() -> Self {
        CorrelationPcPrior::build(
            -0.2,
            PcStrategy::UpperTail,
            PcContrasts {
                omega1: Some(0.6),
                u_max: Some(0.4),
                alpha2: Some(0.05),
                ..Default::default()
            },
        )
        .expect("built-in prior is valid")
    }

    fn side(&self, below: bool) -> (f64, f64) {
        if below {
            (self.omega1, self.lambda1)
        } else {
            (1.0 - self.omega1, self.lambda2)
        }
    }

    /// Prior density on the correlation scale.  Positive everywhere on
    /// `(-1, 1)` and continuous at the base value; unbounded (but integrable)
    /// at the endpoints.
    pub fn density(&self, rho: f64) -> Result<f64> {
        Ok(self.log_density(rho)?.exp())
    }

    /// Log-density on the correlation scale.
    pub fn log_density(&self, rho: f64) -> Result<f64> {
        check_rho(rho)?;
        let (omega, lambda) = self.side(rho <= self.rho0);
        let d = distance_correlation(rho, self.rho0)?;
        let jac = ddist_drho_abs(rho, self.rho0);
        Ok(omega.ln() + lambda.ln() - lambda * d + jac.ln())
    }

    /// Log-density on the unbounded scale `z = log((1+rho)/(1-rho))`,
    /// including the Jacobian `drho/dz = (1-rho^2)/2`.  Safe for any finite
    /// `z`; this is the form the inference engines evaluate.
    pub fn log_density_z(&self, z: f64) -> f64 {
        let (omega, lambda) = self.side(z <= self.z0);
        let kld = self.kld_z(z);
        let d = (2.0 * kld).sqrt();
        omega.ln() + lambda.ln() - lambda * d + self.ddist_dz_abs(z, kld).ln()
    }

    /// Density on the unbounded scale.
    pub fn density_z(&self, z: f64) -> f64 {
        self.log_density_z(z).exp()
    }

    /// Divergence from the base model as a function of `z`, using
    /// `ln(1 - rho^2) = ln 4 - |z| - 2 ln(1 + e^{-|z|})` so the far tails
    /// never form `1 - rho^2` by cancellation.
    fn kld_z(&self, z: f64) -> f64 {
        let s0 = (1.0 - self.rho0) * (1.0 + self.rho0);
        let rho = (0.5 * z).tanh();
        let ln_s = LN_4 - z.abs() - 2.0 * log1p_exp(-z.abs());
        ((1.0 - self.rho0 * rho) / s0 - 1.0 - 0.5 * ln_s + 0.5 * s0.ln()).max(0.0)
    }

    /// `|dd/dz|` given the already-computed divergence at `z`.
    fn ddist_dz_abs(&self, z: f64, kld: f64) -> f64 {
        let rho = (0.5 * z).tanh();
        let ln_s = LN_4 - z.abs() - 2.0 * log1p_exp(-z.abs());
        let s = ln_s.exp();
        let t = rho - self.rho0;
        if t.abs() < 1e-6 {
            return jacobian_series(t, self.rho0) * 0.5 * s;
        }
        let s0 = (1.0 - self.rho0) * (1.0 + self.rho0);
        let kprime = 0.5 * rho - self.rho0 * s / (2.0 * s0);
        kprime.abs() / (2.0 * kld).sqrt()
    }

    /// Cumulative distribution function, available in closed form from the
    /// exponential construction.
    pub fn cdf(&self, rho: f64) -> Result<f64> {
        check_rho(rho)?;
        let d = distance_correlation(rho, self.rho0)?;
        if rho <= self.rho0 {
            Ok(self.omega1 * (-self.lambda1 * d).exp())
        } else {
            Ok(1.0 - (1.0 - self.omega1) * (-self.lambda2 * d).exp())
        }
    }

    /// Quantile function (inverse CDF).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        let (below, d) = if p <= self.omega1 {
            (true, -(p / self.omega1).ln() / self.lambda1)
        } else {
            (
                false,
                -((1.0 - p) / (1.0 - self.omega1)).ln() / self.lambda2,
            )
        };
        Ok((0.5 * self.z_at_distance(below, d)).tanh())
    }

    /// Solve `d(z) = target` on the requested side of the base value by
    /// bracketed bisection on the unbounded scale.
    pub fn z_at_distance(&self, below: bool, target: f64) -> f64 {
        if target <= 0.0 {
            return self.z0;
        }
        let dir = if below { -1.0 } else { 1.0 };
        let mut step = 1.0;
        let mut far = self.z0 + dir * step;
        while self.distance_z(far) < target {
            step *= 2.0;
            if step > 1e12 {
                break;
            }
            far = self.z0 + dir * step;
        }
        let (mut lo, mut hi) = if below { (far, self.z0) } else { (self.z0, far) };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let on_target_side = self.distance_z(mid) >= target;
            if below {
                if on_target_side {
                    lo = mid;
                } else {
                    hi = mid;
                }
            } else if on_target_side {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Distance as a function of `z`.
    pub fn distance_z(&self, z: f64) -> f64 {
        (2.0 * self.kld_z(z)).sqrt()
    }

    /// Draw a correlation: pick a side, draw an exponential distance, invert.
    /// Draws are clamped into the largest open `(-1, 1)` interval f64 can
    /// represent.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let rho = (0.5 * self.sample_z(rng)).tanh();
        rho.clamp(-MAX_ABS_RHO, MAX_ABS_RHO)
    }

    /// Draw on the unbounded scale.
    pub fn sample_z<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let below = rng.gen_bool(self.omega1);
        let (_, lambda) = self.side(below);
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let d = -u.ln() / lambda;
        self.z_at_distance(below, d)
    }
}

/// Largest magnitude strictly inside (-1, 1) in f64.
const MAX_ABS_RHO: f64 = 1.0 - f64::EPSILON / 2.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kld_at_base_is_zero() {
        // The two forms of 1 - rho^2 can disagree by an ulp, so allow noise
        // at the bottom of the scale; the clamp guarantees non-negativity.
        assert!(kld_correlation(0.3, 0.3).unwrap() <= 1e-15);
        assert!(kld_correlation(-0.2, -0.2).unwrap() <= 1e-15);
        assert_eq!(kld_correlation(0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn kld_symmetric_base_reduces_to_log_term() {
        // With rho0 = 0 the divergence is -0.5 ln(1 - rho^2).
        let k = kld_correlation(0.5, 0.0).unwrap();
        assert!((k - (-0.5 * 0.75f64.ln())).abs() < 1e-15);
        assert!((k - 0.143_841_036_225_890_45).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let d = distance_correlation(-0.9, 0.0).unwrap();
        // sqrt(-ln(0.19)) computed independently.
        assert!((d - 1.288_693_604_710_464_5).abs() < 1e-14, "d = {d}");
        assert_eq!(distance_correlation(0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn distance_monotone_on_each_side() {
        let rho0 = -0.2;
        let mut last = f64::INFINITY;
        for i in 0..=2000 {
            let rho = -0.999_999 + (rho0 + 0.999_999) * i as f64 / 2000.0;
            let d = distance_correlation(rho, rho0).unwrap();
            assert!(d <= last + 1e-12, "not decreasing at rho = {rho}");
            last = d;
        }
        last = -1.0;
        for i in 0..=2000 {
            let rho = rho0 + (0.999_999 - rho0) * i as f64 / 2000.0;
            let d = distance_correlation(rho, rho0).unwrap();
            assert!(d >= last - 1e-12, "not increasing at rho = {rho}");
            last = d;
        }
    }

    #[test]
    fn domain_errors() {
        assert!(kld_correlation(1.0, 0.0).is_err());
        assert!(kld_correlation(0.0, -1.0).is_err());
        assert!(kld_correlation(f64::NAN, 0.0).is_err());
        assert!(CorrelationPcPrior::pc0().density(-1.0).is_err());
    }

    #[test]
    fn solved_rates_lower_tail() {
        // Symmetric default: lambda1 = ln(0.5/0.1) / d(-0.9).
        let r = solve_rates(
            0.0,
            PcStrategy::LowerTail,
            &PcContrasts {
                omega1: Some(0.5),
                u_min: Some(-0.9),
                alpha1: Some(0.1),
                ..Default::default()
            },
        )
        .unwrap();
        let expected = 5f64.ln() / 1.288_693_604_710_464_5;
        assert!((r.lambda1 - expected).abs() < 1e-12);
        assert!((r.lambda1 - 1.248_891_052_575_448).abs() < 1e-12);
        assert!((r.lambda2 - r.lambda1).abs() < 1e-12, "symmetric case");
    }

    #[test]
    fn solved_rates_upper_tail() {
        let r = solve_rates(
            -0.2,
            PcStrategy::UpperTail,
            &PcContrasts {
                omega1: Some(0.6),
                u_max: Some(0.4),
                alpha2: Some(0.05),
                ..Default::default()
            },
        )
        .unwrap();
        let d = distance_correlation(0.4, -0.2).unwrap();
        assert!((r.lambda2 - (0.4f64 / 0.05).ln() / d).abs() < 1e-12);
        assert!((r.lambda1 - 0.4 * r.lambda2 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn continuity_identity_holds_for_all_strategies() {
        for prior in [
            CorrelationPcPrior::pc0(),
            CorrelationPcPrior::pc1(),
            CorrelationPcPrior::pc2(),
            CorrelationPcPrior::pc3(),
        ] {
            let left = prior.omega1 * prior.lambda1;
            let right = (1.0 - prior.omega1) * prior.lambda2;
            assert!(
                (left - right).abs() < 1e-10,
                "continuity violated: {left} vs {right}"
            );
        }
    }

    #[test]
    fn both_tails_recovers_requested_masses() {
        let prior = CorrelationPcPrior::pc2();
        // P(rho < -0.9) = alpha1 and P(rho > 0.8) = alpha2 by construction.
        assert!((prior.cdf(-0.9).unwrap() - 0.05).abs() < 1e-10);
        assert!((1.0 - prior.cdf(0.8).unwrap() - 0.05).abs() < 1e-10);
        assert!(prior.omega1 > 0.05 && prior.omega1 < 0.95);
    }

    #[test]
    fn infeasible_contrasts_rejected() {
        let r = solve_rates(
            0.0,
            PcStrategy::LowerTail,
            &PcContrasts {
                omega1: Some(0.5),
                u_min: Some(-0.9),
                alpha1: Some(0.6), // exceeds omega1
                ..Default::default()
            },
        );
        assert!(r.is_err());
        let r = solve_rates(
            0.0,
            PcStrategy::BothTails,
            &PcContrasts {
                u_min: Some(0.5), // on the wrong side of rho0
                alpha1: Some(0.05),
                u_max: Some(0.8),
                alpha2: Some(0.05),
                ..Default::default()
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn density_continuous_at_base() {
        for prior in [CorrelationPcPrior::pc1(), CorrelationPcPrior::pc2()] {
            let eps = 1e-9;
            let left = prior.density(prior.rho0 - eps).unwrap();
            let right = prior.density(prior.rho0 + eps).unwrap();
            let at = prior.density(prior.rho0).unwrap();
            assert!((left / right - 1.0).abs() < 1e-6, "{left} vs {right}");
            assert!((left / at - 1.0).abs() < 1e-6);
            assert!(at.is_finite() && at > 0.0);
        }
    }

    #[test]
    fn density_value_at_base_matches_series_limit() {
        // At the base value the density is omega1 lambda1 sqrt(1 + rho0^2) / (1 - rho0^2).
        let prior = CorrelationPcPrior::pc1();
        let rho0 = prior.rho0;
        let expected = prior.omega1 * prior.lambda1 * (1.0 + rho0 * rho0).sqrt()
            / ((1.0 - rho0) * (1.0 + rho0));
        let got = prior.density(rho0).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn symmetric_prior_is_symmetric() {
        let prior = CorrelationPcPrior::pc0();
        for &rho in &[0.1, 0.3, 0.55, 0.9, 0.99] {
            let a = prior.density(rho).unwrap();
            let b = prior.density(-rho).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(b), "asymmetry at {rho}");
        }
    }

    #[test]
    fn z_scale_density_matches_rho_scale() {
        let prior = CorrelationPcPrior::pc2();
        for &rho in &[-0.995, -0.6, -0.31, 0.1, 0.73, 0.999] {
            let z = 2.0 * (rho as f64).atanh();
            let via_rho =
                prior.log_density(rho).unwrap() + ((1.0 - rho) * (1.0 + rho) / 2.0).ln();
            let via_z = prior.log_density_z(z);
            assert!(
                (via_rho - via_z).abs() < 1e-10,
                "mismatch at rho = {rho}: {via_rho} vs {via_z}"
            );
        }
        // Within sqrt(eps) of the base value the cancellation in the raw
        // divergence dominates; both paths still agree to quadrature level.
        let rho = -0.2000001;
        let z = 2.0 * (rho as f64).atanh();
        let via_rho = prior.log_density(rho).unwrap() + ((1.0 - rho) * (1.0 + rho) / 2.0).ln();
        assert!((via_rho - prior.log_density_z(z)).abs() < 1e-6);
    }

    #[test]
    fn z_scale_density_finite_in_far_tails() {
        let prior = CorrelationPcPrior::pc1();
        for &z in &[-500.0, -60.0, 60.0, 500.0] {
            let ld = prior.log_density_z(z);
            assert!(ld.is_finite());
            assert!(ld < -10.0, "tail density should be tiny, got {ld}");
        }
    }

    #[test]
    fn cdf_matches_contrasts() {
        let p1 = CorrelationPcPrior::pc1();
        assert!((p1.cdf(-0.95).unwrap() - 0.05).abs() < 1e-12);
        assert!((p1.cdf(-0.2).unwrap() - 0.4).abs() < 1e-12);
        let p3 = CorrelationPcPrior::pc3();
        assert!((p3.cdf(0.4).unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let prior = CorrelationPcPrior::pc2();
        for &p in &[0.01, 0.2, prior.omega1, 0.7, 0.99] {
            let q = prior.quantile(p).unwrap();
            // Near the base value the distance itself is sqrt of a heavily
            // cancelled difference, so the roundtrip carries sqrt(eps) noise.
            assert!((prior.cdf(q).unwrap() - p).abs() < 1e-7, "p = {p}");
        }
    }

    #[test]
    fn samples_stay_inside_open_interval() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let prior = CorrelationPcPrior::pc0();
        for _ in 0..20_000 {
            let rho = prior.sample(&mut rng);
            assert!(rho > -1.0 && rho < 1.0);
        }
    }
}
