//! Sampling and density primitives used by the Gibbs sampler.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::special::{log_norm_cdf_diff, norm_cdf, norm_logpdf, norm_quantile};

/// Interval mass below which the inverse-CDF method gives way to rejection.
const INVERSE_CDF_MIN_MASS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalParams {
    pub mean: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormalParams {
    /// Normal truncated to the spectral support `(0, 2)`.
    pub fn on_unit_band(mean: f64, variance: f64) -> Self {
        TruncatedNormalParams {
            mean,
            variance,
            lower: 0.0,
            upper: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) || !self.mean.is_finite() {
            return Err(Error::InvalidParam(format!(
                "truncated normal needs finite mean and positive variance, got ({}, {})",
                self.mean, self.variance
            )));
        }
        if !(self.lower < self.upper) {
            return Err(Error::InvalidParam(format!(
                "empty truncation interval ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    fn standardized(&self) -> (f64, f64, f64) {
        let sd = self.variance.sqrt();
        (sd, (self.lower - self.mean) / sd, (self.upper - self.mean) / sd)
    }

    /// Log of the normal mass inside the interval.
    pub fn log_mass(&self) -> f64 {
        let (_, a, b) = self.standardized();
        log_norm_cdf_diff(a, b)
    }
}

/// Log of the probability a `N(mean, variance)` variable falls in `(0, 2)`.
pub fn log_unit_band_mass(mean: f64, variance: f64) -> f64 {
    TruncatedNormalParams::on_unit_band(mean, variance).log_mass()
}

/// Standard normal restricted to `(a, b)` by inverse CDF; `a <= 0` assumed
/// so the lower tail carries the precision.
fn std_truncnorm_inverse<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let pa = norm_cdf(a);
    let pb = norm_cdf(b);
    let u: f64 = rng.random();
    norm_quantile(pa + u * (pb - pa))
}

/// Standard normal restricted to `(a, b)` with `a > 0` and small mass.
fn std_truncnorm_upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if 0.5 * (b * b - a * a) < 1.0 {
        // Narrow interval: uniform proposal, density maximal at `a`.
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            let u: f64 = rng.random();
            if u.ln() < -0.5 * (z * z - a * a) {
                return z;
            }
        }
    }
    // Exponential proposal with the optimal rate, discarding draws past `b`.
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.random::<f64>();
        let z = a - (1.0 - e).ln() / rate;
        if z >= b {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() < -0.5 * (z - rate) * (z - rate) {
            return z;
        }
    }
}

/// Standard normal restricted to `(a, b)` with `a < 0 < b` but tiny mass
/// (a very wide variance around a point inside the interval).
fn std_truncnorm_center<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        let u: f64 = rng.random();
        if u.ln() < -0.5 * z * z {
            return z;
        }
    }
}

pub fn sample_truncnorm<R: Rng + ?Sized>(p: &TruncatedNormalParams, rng: &mut R) -> f64 {
    let (sd, a, b) = p.standardized();
    let z = if log_norm_cdf_diff(a, b) > INVERSE_CDF_MIN_MASS.ln() {
        if a > 0.0 {
            -std_truncnorm_inverse(-b, -a, rng)
        } else {
            std_truncnorm_inverse(a, b, rng)
        }
    } else if a >= 0.0 {
        std_truncnorm_upper_tail(a, b, rng)
    } else if b <= 0.0 {
        -std_truncnorm_upper_tail(-b, -a, rng)
    } else {
        std_truncnorm_center(a, b, rng)
    };
    let x = p.mean + sd * z;
    let eps = 1e-12 * (p.upper - p.lower);
    x.clamp(p.lower + eps, p.upper - eps)
}

pub fn logpdf_truncnorm(x: f64, p: &TruncatedNormalParams) -> Result<f64> {
    if !(x > p.lower && x < p.upper) {
        return Err(Error::OutOfSupport(x));
    }
    let (sd, _, _) = p.standardized();
    Ok(norm_logpdf((x - p.mean) / sd) - sd.ln() - p.log_mass())
}

/// `ln Γ(shape+1) draw · U^{1/shape}` in log space, so shapes far below one
/// do not underflow. Returns the log of a `Gamma(shape, 1)` variate.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::InvalidParam(format!("gamma shape must be positive, got {shape}")));
    }
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidParam(e.to_string()))?;
        return Ok(g.sample(rng).ln());
    }
    let g = Gamma::new(shape + 1.0, 1.0).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let u: f64 = 1.0 - rng.random::<f64>();
    Ok(g.sample(rng).ln() + u.ln() / shape)
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParam(format!("gamma rate must be positive, got {rate}")));
    }
    Ok((sample_log_gamma(shape, rng)? - rate.ln()).exp())
}

/// Inverse gamma with density ∝ x^{-shape-1} e^{-rate/x}.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParam(format!("inverse gamma rate must be positive, got {rate}")));
    }
    Ok((rate.ln() - sample_log_gamma(shape, rng)?).exp())
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let x = sample_log_gamma(a, rng)?;
    let y = sample_log_gamma(b, rng)?;
    let m = x.max(y);
    Ok((x - m).exp() / ((x - m).exp() + (y - m).exp()))
}

/// Dirichlet draw built from log-gamma variates; components are floored at
/// `1e-300` so every weight stays strictly positive.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidParam("empty Dirichlet parameter".into()));
    }
    if alpha.len() == 1 {
        sample_log_gamma(alpha[0], rng)?;
        return Ok(vec![1.0]);
    }
    let logs = alpha
        .iter()
        .map(|&a| sample_log_gamma(a, rng))
        .collect::<Result<Vec<f64>>>()?;
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|&l| ((l - m).exp()).max(1e-300)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Matrix normal with mean `M` (T×n) and covariance `scale · (colCov ⊗ rowCov)`
/// for the column-stacked draw.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixNormalParams {
    pub mean: DMatrix<f64>,
    pub row_cov: DMatrix<f64>,
    pub col_cov: DMatrix<f64>,
    pub scale: f64,
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn sample_matrix_normal<R: Rng + ?Sized>(p: &MatrixNormalParams, rng: &mut R) -> Result<DMatrix<f64>> {
    let (t, n) = p.mean.shape();
    if p.row_cov.shape() != (t, t) {
        return Err(Error::ShapeMismatch {
            expected: (t, t),
            found: p.row_cov.shape(),
        });
    }
    if p.col_cov.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            found: p.col_cov.shape(),
        });
    }
    if !(p.scale > 0.0) {
        return Err(Error::InvalidParam(format!("matrix normal scale must be positive, got {}", p.scale)));
    }
    let lr = cholesky_with_jitter(&p.row_cov)?.l();
    let lc = cholesky_with_jitter(&p.col_cov)?.l();
    let z = standard_normal_matrix(t, n, rng);
    Ok(&p.mean + (lr * z * lc.transpose()) * p.scale.sqrt())
}
