//! Sampling on the Stiefel manifold and its positive-first-column part 𝒱*.
//!
//! The matrix Langevin sampler updates one column at a time. Given the other
//! columns, column `k` is uniform on the unit sphere of their orthogonal
//! complement tilted by `exp(c_kᵀ u)`, i.e. a von Mises-Fisher law in that
//! `(n - T + 1)`-dimensional subspace. The complement is handled through the
//! projector `I - U₋ₖU₋ₖᵀ`, so no basis is ever formed.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::sample_beta;
use crate::error::{Error, Result};
use crate::linalg::{orthonormality_defect, orthonormalize_columns};

/// Attempts allowed when rejecting the first column into the positive orthant.
pub const POSITIVITY_ATTEMPTS: usize = 200;

/// Orthonormality drift that triggers re-orthonormalization.
const DRIFT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiefelPoint {
    u: DMatrix<f64>,
}

impl StiefelPoint {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if u.ncols() == 0 || u.ncols() > u.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "Stiefel point needs 1 <= T <= n, got {} x {}",
                u.nrows(),
                u.ncols()
            )));
        }
        if orthonormality_defect(&u) > 1e-8 {
            return Err(Error::InvalidParam("columns are not orthonormal".into()));
        }
        if let Some(i) = u.column(0).iter().position(|&x| !(x > 0.0)) {
            return Err(Error::NonPositiveFirstEigenvector(i));
        }
        Ok(StiefelPoint { u })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.u
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn t(&self) -> usize {
        self.u.ncols()
    }
}

/// Natural parameter `C` of the density `∝ etr(CᵀU)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LangevinParams {
    pub c: DMatrix<f64>,
}

/// Counts from one Langevin transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangevinReport {
    /// Rejected first-column proposals.
    pub rejections: usize,
    /// True when the cap was hit and the previous first column was kept.
    pub exhausted: bool,
    pub reorthonormalized: bool,
}

fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn sample_uniform_stiefel_star<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> StiefelPoint {
    assert!(t >= 1 && t <= n, "uniform Stiefel draw needs 1 <= T <= n");
    loop {
        let mut m = DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(rng));
        m.column_mut(0).apply(|x: &mut f64| *x = x.abs());
        if m.column(0).iter().any(|&x| x == 0.0) {
            continue;
        }
        if let Some(u) = orthonormalize_columns(&m) {
            return StiefelPoint { u };
        }
    }
}

/// Cosine `w = μᵀx` of a von Mises-Fisher draw on `S^{p-1}` (Wood's algorithm).
/// Requires `p >= 2`.
fn vmf_cosine<R: Rng + ?Sized>(kappa: f64, p: usize, rng: &mut R) -> (f64, f64) {
    let m = (p - 1) as f64;
    // b = (-2κ + √(4κ² + m²)) / m, rearranged to avoid cancellation.
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    loop {
        let z = sample_beta(0.5 * m, 0.5 * m, rng).expect("beta shape is positive");
        let denom = 1.0 - (1.0 - b) * z;
        let w = (1.0 - (1.0 + b) * z) / denom;
        let one_minus_w = 2.0 * b * z / denom;
        let u: f64 = rng.random();
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            return (w, one_minus_w);
        }
    }
}

/// Assembles `w μ + √(1 - w²) v` with `v` uniform on the unit sphere of
/// `range(P) ∩ μ^⊥`, where `P` is the given projector (identity if `None`).
fn combine_with_tangent<R: Rng + ?Sized>(
    mu: &DVector<f64>,
    w: f64,
    one_minus_w: f64,
    projector: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> DVector<f64> {
    let n = mu.len();
    let sin = (one_minus_w * (1.0 + w)).max(0.0).sqrt();
    loop {
        let g = gaussian_vector(n, rng);
        let mut v = match projector {
            Some(p) => p * g,
            None => g,
        };
        let along = mu.dot(&v);
        v.axpy(-along, mu, 1.0);
        let norm = v.norm();
        if norm > 1e-12 {
            let mut x = mu * w + v * (sin / norm);
            let len = x.norm();
            x /= len;
            return x;
        }
    }
}

/// Von Mises-Fisher draw on the unit sphere in `R^n` with mean `direction`.
pub fn vmf_sample<R: Rng + ?Sized>(direction: &DVector<f64>, kappa: f64, rng: &mut R) -> DVector<f64> {
    let n = direction.len();
    assert!((direction.norm() - 1.0).abs() < 1e-8, "vMF direction must be a unit vector");
    assert!(kappa >= 0.0, "vMF concentration must be nonnegative");
    if n == 1 {
        return sign_draw(direction, kappa, rng);
    }
    let (w, omw) = vmf_cosine(kappa, n, rng);
    combine_with_tangent(direction, w, omw, None, rng)
}

/// On a one-dimensional subspace the law is `±μ` with weights `e^{±κ}`.
fn sign_draw<R: Rng + ?Sized>(mu: &DVector<f64>, kappa: f64, rng: &mut R) -> DVector<f64> {
    let p_plus = 1.0 / (1.0 + (-2.0 * kappa).exp());
    if rng.random::<f64>() < p_plus {
        mu.clone()
    } else {
        -mu
    }
}

/// Draws one column from `∝ exp(cᵀu)` on the unit sphere of `range(P)`,
/// where `P` projects onto a `dim`-dimensional subspace.
fn column_conditional<R: Rng + ?Sized>(
    c: &DVector<f64>,
    projector: &DMatrix<f64>,
    dim: usize,
    rng: &mut R,
) -> DVector<f64> {
    let pc = projector * c;
    let kappa = pc.norm();
    let mu = if kappa > 1e-300 {
        pc / kappa
    } else {
        loop {
            let v = projector * gaussian_vector(c.len(), rng);
            let norm = v.norm();
            if norm > 1e-12 {
                break v / norm;
            }
        }
    };
    if dim == 1 {
        return sign_draw(&mu, kappa, rng);
    }
    let (w, omw) = vmf_cosine(kappa, dim, rng);
    combine_with_tangent(&mu, w, omw, Some(projector), rng)
}

fn complement_projector(u: &DMatrix<f64>, skip: usize) -> DMatrix<f64> {
    let n = u.nrows();
    let mut p = DMatrix::identity(n, n);
    for j in 0..u.ncols() {
        if j != skip {
            let col = u.column(j);
            p.ger(-1.0, &col, &col, 1.0);
        }
    }
    p
}

/// One column-wise Gibbs transition targeting `∝ etr(CᵀU)` on 𝒱*.
pub fn sample_matrix_langevin<R: Rng + ?Sized>(
    params: &LangevinParams,
    current: &StiefelPoint,
    rng: &mut R,
) -> Result<(StiefelPoint, LangevinReport)> {
    let (n, t) = current.u.shape();
    if params.c.shape() != (n, t) {
        return Err(Error::ShapeMismatch {
            expected: (n, t),
            found: params.c.shape(),
        });
    }
    if params.c.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParam("Langevin concentration has non-finite entries".into()));
    }
    let mut u = current.u.clone();
    let mut report = LangevinReport::default();
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(rng);
    let dim = n - t + 1;
    for &k in &order {
        let proj = complement_projector(&u, k);
        let c = params.c.column(k).clone_owned();
        if k == 0 {
            let mut accepted = None;
            for _ in 0..POSITIVITY_ATTEMPTS {
                let x = column_conditional(&c, &proj, dim, rng);
                if x.iter().all(|&v| v > 0.0) {
                    accepted = Some(x);
                    break;
                }
                report.rejections += 1;
            }
            match accepted {
                Some(x) => u.set_column(0, &x),
                None => report.exhausted = true,
            }
        } else {
            let x = column_conditional(&c, &proj, dim, rng);
            u.set_column(k, &x);
        }
    }
    if orthonormality_defect(&u) > DRIFT_TOL {
        if let Some(q) = orthonormalize_columns(&u) {
            u = q;
            report.reorthonormalized = true;
        }
    }
    Ok((StiefelPoint { u }, report))
}

/// `tr(CᵀU)`, the log target up to a constant.
pub fn langevin_log_density(c: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    c.dot(u)
}
