//! Dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter ladder tried before a Cholesky factorization is declared failed.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    for &jitter in &JITTER_LADDER {
        let mut a = m.clone();
        if jitter > 0.0 {
            for i in 0..a.nrows() {
                a[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok(c);
        }
    }
    Err(Error::NotPositiveDefinite)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Frobenius norm of `UᵀU − I`.
pub fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    let gram = u.transpose() * u;
    (gram - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vectors, values))
}

/// Sorted eigenvalues only.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Modified Gram-Schmidt on the columns of `m`, applied twice for stability.
/// Returns `None` if a column is numerically dependent on the previous ones.
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut q = m.clone();
    for k in 0..q.ncols() {
        for _ in 0..2 {
            for j in 0..k {
                let proj = q.column(j).dot(&q.column(k));
                let qj = q.column(j).clone_owned();
                q.column_mut(k).axpy(-proj, &qj, 1.0);
            }
        }
        let norm = q.column(k).norm();
        if !(norm > 1e-12) {
            return None;
        }
        q.column_mut(k).unscale_mut(norm);
    }
    Some(q)
}
