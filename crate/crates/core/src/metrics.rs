//! Evaluation metrics and the spectral-clustering baseline.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::chain::PosteriorSamples;
use crate::error::{Error, Result};
use crate::graph::full_eigendecomposition;
use crate::model::kmeans;
use crate::rng::ChainRng;

/// Restarts used by the spectral baseline.
pub const BASELINE_RESTARTS: usize = 20;

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2I / (H_a + H_b)`. Two constant labelings
/// score 1; a constant against a non-constant labeling scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidParam("labelings are empty".into()));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    // Equal partitions up to relabeling score exactly 1.
    if joint.len() == ca.len() && joint.len() == cb.len() {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// Fraction of pairs on which two labelings agree about co-membership.
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            agree += usize::from((a[i] == a[j]) == (b[i] == b[j]));
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}

/// Spiked mean keeping only the spikes flagged by `eta`; the rest are
/// absorbed into the flat part at `theta`.
pub fn truncated_spiked_mean(q: &DMatrix<f64>, lambda: &[f64], eta: &[bool], theta: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let mut out = DMatrix::identity(n, n) * theta;
    for k in (0..q.ncols()).filter(|&k| eta[k]) {
        let col = q.column(k);
        out += (col * col.transpose()) * (lambda[k] - theta);
    }
    out
}

/// Entrywise RMS difference between `observed` and the posterior average of
/// the κ-truncated spiked means of graph `s`.
pub fn rmse_laplacian(samples: &PosteriorSamples, s: usize, observed: &DMatrix<f64>) -> Result<f64> {
    if samples.samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let n = observed.nrows();
    let mut avg = DMatrix::zeros(n, n);
    for d in &samples.samples {
        let g = &d.graphs[s];
        avg += truncated_spiked_mean(d.q(s), &g.lambda, &g.eta, g.theta);
    }
    avg /= samples.samples.len() as f64;
    Ok(rmse(&avg, observed))
}

pub fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

/// Seeded k-means with [`BASELINE_RESTARTS`] restarts on the rows of `x`;
/// labels are 1-based.
pub fn kmeans_labels(x: &DMatrix<f64>, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChainRng::derive(seed, &[0x5B]);
    kmeans(x, k, BASELINE_RESTARTS, &mut rng).into_iter().map(|c| c + 1).collect()
}

/// Spectral clustering: k-means on the rows of the eigenvectors of the `k`
/// smallest eigenvalues of `l`. Labels are 1-based.
pub fn baseline_spectral_sbm(l: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = l.nrows();
    if k < 2 || k > n {
        return Err(Error::InvalidParam(format!("baseline needs 2 <= k <= n, got {k}")));
    }
    let (w, _) = full_eigendecomposition(l)?;
    Ok(kmeans_labels(&w.columns(0, k).clone_owned(), k, seed))
}

/// Spiked-form fit of `l` from its `dim` smallest eigenpairs, with the
/// remaining spectrum replaced by its mean.
pub fn spectral_spiked_fit(l: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let (w, omega) = full_eigendecomposition(l)?;
    let n = l.nrows();
    if dim >= n {
        return Err(Error::TooManySpikes { spikes: dim, n });
    }
    let theta = omega.iter().skip(dim).sum::<f64>() / (n - dim) as f64;
    let mut out = DMatrix::identity(n, n) * theta;
    for k in 0..dim {
        let col = w.column(k);
        out += (col * col.transpose()) * (omega[k] - theta);
    }
    Ok(out)
}
