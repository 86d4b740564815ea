//! Small numerical helpers shared across the crate.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

/// Natural logarithm of the binomial coefficient `C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Log-odds transform; infinite at the endpoints of `(0, 1)`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse logit, evaluated without overflow for any finite argument.
pub fn invlogit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without intermediate overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 33.0 {
        x
    } else if x > -37.0 {
        x.exp().ln_1p()
    } else {
        x.exp()
    }
}

/// `ln(invlogit(x))`, stable for large negative `x`.
pub fn log_invlogit(x: f64) -> f64 {
    -log1p_exp(-x)
}

/// `ln(sum(exp(x)))` shifted by the maximum to avoid overflow.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Log-density of `N(mean, var)` at `x`.
pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (var.ln() + d * d / var + LN_TWO_PI)
}

pub const LN_TWO_PI: f64 = 1.837_877_066_409_345_5;

/// Trapezoid-rule integral of samples `y` over (possibly non-uniform) grid `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for i in 1..x.len() {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    }
    acc
}

/// Empirical quantile of a sorted sample, with linear interpolation between
/// order statistics (the common "type 7" definition).
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 2) + 1;
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Mean and (population) variance in one pass.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_choose_small_values() {
        assert!((ln_choose(5, 2) - 10f64.ln()).abs() < 1e-12);
        assert!((ln_choose(10, 0)).abs() < 1e-12);
        assert!((ln_choose(33, 25) - (13_884_156f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn logit_invlogit_roundtrip() {
        for &p in &[1e-9, 0.01, 0.3, 0.5, 0.9, 1.0 - 1e-9] {
            assert!((invlogit(logit(p)) - p).abs() < 1e-12);
        }
        assert!(invlogit(-800.0) >= 0.0);
        assert!(invlogit(800.0) <= 1.0);
        assert!((invlogit(800.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log1p_exp_matches_naive_in_safe_range() {
        for &x in &[-30.0f64, -5.0, -0.1, 0.0, 0.1, 5.0, 30.0] {
            let naive = (1f64 + x.exp()).ln();
            assert!((log1p_exp(x) - naive).abs() < 1e-12);
        }
        assert_eq!(log1p_exp(1000.0), 1000.0);
        assert!(log1p_exp(-1000.0) >= 0.0);
    }

    #[test]
    fn logsumexp_shifts() {
        let xs = [1000.0, 1000.0];
        assert!((logsumexp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((sample_quantile(&xs, 0.5) - 2.5).abs() < 1e-12);
        assert!((sample_quantile(&xs, 0.0) - 1.0).abs() < 1e-12);
        assert!((sample_quantile(&xs, 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn normal_helpers_agree() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        let lp = normal_log_pdf(1.0, 0.0, 4.0);
        let direct = -0.5 * (4f64.ln() + 0.25 + LN_TWO_PI);
        assert!((lp - direct).abs() < 1e-12);
    }
}
