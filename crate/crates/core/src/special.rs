//! Standard normal CDF helpers that stay finite deep in the tails.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `ln Φ(z)`, accurate for very negative `z` where `Φ` underflows.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z > 5.0 {
        (-0.5 * erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z > -30.0 {
        (0.5 * erfc(-z * FRAC_1_SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            + 105.0 / (z2 * z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
pub fn log1mexp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(Φ(b) - Φ(a))` for `a < b`.
pub fn log_norm_cdf_diff(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        // Both in the upper tail: use Φ(b) - Φ(a) = Φ(-a) - Φ(-b).
        return log_norm_cdf_diff(-b, -a);
    }
    if b > 0.0 {
        // Straddles zero: the mass is at least min(Φ(b), 1-Φ(a)) - 1/2.
        return (norm_cdf(b) - norm_cdf(a)).ln();
    }
    let lb = log_norm_cdf(b);
    let la = log_norm_cdf(a);
    lb + log1mexp(la - lb)
}

/// Inverse of the standard normal CDF, polished with one Newton step.
pub fn norm_quantile(p: f64) -> f64 {
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    if !z.is_finite() {
        return z;
    }
    let dens = norm_logpdf(z).exp();
    if dens > 0.0 {
        z - (norm_cdf(z) - p) / dens
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cdf_matches_direct_in_the_bulk() {
        for &z in &[-10.0, -3.0, -0.5, 0.0, 1.2, 4.0, 8.0] {
            let direct = norm_cdf(z).ln();
            assert!((log_norm_cdf(z) - direct).abs() < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn log_cdf_is_continuous_at_the_asymptotic_switch() {
        let lo = log_norm_cdf(-30.0 - 1e-9);
        let hi = log_norm_cdf(-30.0 + 1e-9);
        assert!((lo - hi).abs() < 1e-6);
        assert!(log_norm_cdf(-200.0).is_finite());
    }

    #[test]
    fn cdf_difference_tails() {
        let d = log_norm_cdf_diff(40.0, 41.0);
        let expect = log_norm_cdf(-40.0) + log1mexp(log_norm_cdf(-41.0) - log_norm_cdf(-40.0));
        assert!((d - expect).abs() < 1e-12);
        assert!(d.is_finite());
        let mid = log_norm_cdf_diff(-1.0, 1.0);
        assert!((mid - 0.682_689_492_137_086_f64.ln()).abs() < 1e-12, "{mid}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 0.01, 0.3, 0.5, 0.9, 0.999_999] {
            let z = norm_quantile(p);
            assert!((norm_cdf(z) - p).abs() / p < 1e-9, "p = {p}");
        }
    }
}
