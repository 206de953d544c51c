//! Weighted graphs, normalized Laplacians and the spiked representation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, orthonormality_defect, sorted_symmetric_eigen};

/// Tolerance on `|A_ij - A_ji|` accepted at ingestion.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Undirected graph with a symmetric, nonnegative, zero-diagonal adjacency
/// matrix and no isolated vertices. Connectivity is checked on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    adjacency: DMatrix<f64>,
}

impl WeightedGraph {
    pub fn new(adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(Error::NotSquare(n, adjacency.ncols()));
        }
        if n == 0 {
            return Err(Error::DimensionMismatch("graph has no vertices".into()));
        }
        let asym = max_asymmetry(&adjacency);
        if asym > SYMMETRY_TOL * (1.0 + adjacency.amax()) {
            return Err(Error::AsymmetricInput(asym));
        }
        let mut a = adjacency;
        for i in 0..n {
            if a[(i, i)] != 0.0 {
                return Err(Error::NonZeroDiagonal(i));
            }
            for j in (i + 1)..n {
                let w = 0.5 * (a[(i, j)] + a[(j, i)]);
                if !(w >= 0.0) {
                    return Err(Error::NegativeWeight(i, j));
                }
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
        let g = WeightedGraph { adjacency: a };
        if let Some(i) = g.degrees().iter().position(|&d| !(d > 0.0)) {
            return Err(Error::ZeroDegreeVertex(i));
        }
        if !g.is_connected() {
            return Err(Error::DisconnectedGraph);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn into_adjacency(self) -> DMatrix<f64> {
        self.adjacency
    }

    pub fn degrees(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.adjacency.row_iter().map(|r| r.sum()))
    }

    fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && self.adjacency[(i, j)] > 0.0 {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedLaplacian {
    pub l: DMatrix<f64>,
    /// `d_i^{1/2}`, the unnormalized null vector of `l`.
    pub degree_sqrt: DVector<f64>,
}

impl NormalizedLaplacian {
    pub fn n(&self) -> usize {
        self.l.nrows()
    }
}

/// `L = D^{-1/2}(D - A)D^{-1/2}`.
pub fn build_laplacian(g: &WeightedGraph) -> Result<NormalizedLaplacian> {
    let n = g.n();
    let d = g.degrees();
    if let Some(i) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ZeroDegreeVertex(i));
    }
    let asym = max_asymmetry(g.adjacency());
    if asym > SYMMETRY_TOL * (1.0 + g.adjacency().amax()) {
        return Err(Error::AsymmetricInput(asym));
    }
    let inv_sqrt = d.map(|x| 1.0 / x.sqrt());
    let a = g.adjacency();
    let l = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            -a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]
        }
    });
    Ok(NormalizedLaplacian {
        l,
        degree_sqrt: d.map(f64::sqrt),
    })
}

/// `A = D^{1/2}(I - L)D^{1/2}` with `D = diag(q1²)` and the diagonal set to zero.
///
/// The result is returned as a plain matrix because a model-generated `L`
/// need not map to nonnegative weights.
pub fn recover_adjacency(l: &DMatrix<f64>, q1: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(Error::NotSquare(n, l.ncols()));
    }
    if q1.len() != n {
        return Err(Error::ShapeMismatch {
            expected: (n, 1),
            found: (q1.len(), 1),
        });
    }
    if let Some(i) = q1.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveFirstEigenvector(i));
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = -0.5 * (l[(i, j)] + l[(j, i)]) * q1[i] * q1[j];
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    Ok(a)
}

/// Per-graph spiked parameters: `T` eigenvectors, spike eigenvalues, the
/// flat eigenvalue and the spike indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikedDecomposition {
    pub q: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub theta: f64,
    pub eta: Vec<bool>,
}

impl SpikedDecomposition {
    pub fn new(q: DMatrix<f64>, lambda: DVector<f64>, theta: f64, eta: Vec<bool>) -> Result<Self> {
        let d = SpikedDecomposition { q, lambda, theta, eta };
        d.validate()?;
        Ok(d)
    }

    pub fn t(&self) -> usize {
        self.q.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.q.ncols();
        if t == 0 || self.lambda.len() != t || self.eta.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "Q has {t} columns, lambda {} entries, eta {}",
                self.lambda.len(),
                self.eta.len()
            )));
        }
        if orthonormality_defect(&self.q) > 1e-8 {
            return Err(Error::InvalidParam("Q columns are not orthonormal".into()));
        }
        if let Some(i) = self.q.column(0).iter().position(|&x| !(x > 0.0)) {
            return Err(Error::NonPositiveFirstEigenvector(i));
        }
        if self.lambda[0] != 0.0 || !self.eta[0] {
            return Err(Error::InvalidParam("lambda[1] must be 0 and eta[1] must be 1".into()));
        }
        if let Some(&x) = self.lambda.iter().skip(1).find(|&&x| !(x > 0.0 && x < 2.0)) {
            return Err(Error::OutOfSupport(x));
        }
        if !(self.theta > 0.0 && self.theta < 2.0) {
            return Err(Error::OutOfSupport(self.theta));
        }
        Ok(())
    }
}

/// `μ_L = Q(Λ - θI)Qᵀ + θI`.
pub fn spiked_reconstruct(d: &SpikedDecomposition) -> DMatrix<f64> {
    spiked_mean(&d.q, d.lambda.as_slice(), d.theta)
}

pub(crate) fn spiked_mean(q: &DMatrix<f64>, lambda: &[f64], theta: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let mut scaled = q.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= lambda[k] - theta;
    }
    let mut mu = scaled * q.transpose();
    for i in 0..n {
        mu[(i, i)] += theta;
    }
    mu.fill_upper_triangle_with_lower_triangle();
    mu
}

/// Applies the sign convention to eigenvector columns in place: the first
/// column is made nonnegative (by its sum) and every later column has its
/// largest-magnitude entry positive.
pub fn fix_signs(w: &mut DMatrix<f64>) {
    for (k, mut col) in w.column_iter_mut().enumerate() {
        let flip = if k == 0 {
            col.sum() < 0.0
        } else {
            let mut best = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            col[best] < 0.0
        };
        if flip {
            col.neg_mut();
        }
    }
}

/// Ascending eigendecomposition with the deterministic sign convention.
pub fn full_eigendecomposition(l: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if l.nrows() != l.ncols() {
        return Err(Error::NotSquare(l.nrows(), l.ncols()));
    }
    let (mut w, omega) = sorted_symmetric_eigen(l)?;
    fix_signs(&mut w);
    Ok((w, DVector::from_vec(omega)))
}

fn block_count(labels: &[usize]) -> Result<usize> {
    let kappa = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut used = vec![false; kappa];
    for &c in labels {
        used[c] = true;
    }
    if let Some(b) = used.iter().position(|&u| !u) {
        return Err(Error::EmptyBlock(b));
    }
    Ok(kappa)
}

/// Sparsest κ-cut ratio: total crossing weight over the smallest
/// within-complement weight. Labels are 0-based block indices.
pub fn normalized_cut_loss(a: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = a.nrows();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let kappa = block_count(labels)?;
    if kappa < 2 {
        return Err(Error::InvalidParam("normalized cut needs at least two blocks".into()));
    }
    // between[m][l] = Σ_{i∈V_m, j∈V_l} A_ij
    let mut between = vec![vec![0.0; kappa]; kappa];
    for i in 0..n {
        for j in 0..n {
            between[labels[i]][labels[j]] += a[(i, j)];
        }
    }
    let mut crossing = 0.0;
    for m in 0..kappa {
        for l in (m + 1)..kappa {
            crossing += between[m][l];
        }
    }
    let mut denom = f64::INFINITY;
    for l in 0..kappa {
        let within: f64 = (0..kappa)
            .filter(|&m| m != l)
            .flat_map(|m| (0..kappa).filter(|&k| k != l).map(move |k| (m, k)))
            .map(|(m, k)| between[m][k])
            .sum();
        denom = denom.min(within);
    }
    if !(denom > 0.0) {
        return Err(Error::DegenerateDenominator);
    }
    Ok(crossing / denom)
}

/// Eigenvalue ceiling on the optimal κ-cut: `√(2λ₂)` for κ = 2 and
/// `8 ln(κ) √λ_κ` otherwise. `lambda_sorted[0]` is the smallest eigenvalue.
pub fn cheeger_bound(kappa: usize, lambda_sorted: &[f64]) -> f64 {
    assert!(kappa >= 2 && kappa <= lambda_sorted.len(), "cheeger_bound needs 2 <= kappa <= len");
    let lk = lambda_sorted[kappa - 1].max(0.0);
    if kappa == 2 {
        (2.0 * lk).sqrt()
    } else {
        8.0 * (kappa as f64).ln() * lk.sqrt()
    }
}

/// `min_O ‖Qa O − Qb‖_F` over orthogonal `O`, by orthogonal Procrustes.
pub fn subspace_distance(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Result<f64> {
    if qa.shape() != qb.shape() {
        return Err(Error::ShapeMismatch {
            expected: qa.shape(),
            found: qb.shape(),
        });
    }
    let m = qa.transpose() * qb;
    let svd = m.svd(true, true);
    let o = svd.u.ok_or(Error::ConvergenceFailure)? * svd.v_t.ok_or(Error::ConvergenceFailure)?;
    Ok((qa * o - qb).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn triangle() -> WeightedGraph {
        WeightedGraph::new(dmatrix![0.0, 1.0, 1.0; 1.0, 0.0, 1.0; 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn two_vertex_laplacian() {
        let g = WeightedGraph::new(dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap();
        let lap = build_laplacian(&g).unwrap();
        assert_eq!(lap.l, dmatrix![1.0, -1.0; -1.0, 1.0]);
        let a = recover_adjacency(&lap.l, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(a, dmatrix![0.0, 1.0; 1.0, 0.0]);
    }

    #[test]
    fn triangle_laplacian_and_spectrum() {
        let lap = build_laplacian(&triangle()).unwrap();
        let expect = dmatrix![1.0, -0.5, -0.5; -0.5, 1.0, -0.5; -0.5, -0.5, 1.0];
        assert!((&lap.l - expect).amax() < 1e-15);
        let (_, omega) = full_eigendecomposition(&lap.l).unwrap();
        for (got, want) in omega.iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        let a = recover_adjacency(&lap.l, &lap.degree_sqrt).unwrap();
        assert!((a - triangle().adjacency()).amax() < 1e-12);
    }

    #[test]
    fn ingestion_errors() {
        assert!(matches!(
            WeightedGraph::new(dmatrix![0.0, 1.0; 0.5, 0.0]),
            Err(Error::AsymmetricInput(_))
        ));
        assert!(matches!(
            WeightedGraph::new(dmatrix![0.0, 0.0, 1.0; 0.0, 0.0, 0.0; 1.0, 0.0, 0.0]),
            Err(Error::ZeroDegreeVertex(1))
        ));
        assert!(matches!(
            WeightedGraph::new(dmatrix![0.0, -1.0; -1.0, 0.0]),
            Err(Error::NegativeWeight(0, 1))
        ));
        let two_edges = DMatrix::from_fn(4, 4, |i, j| if i != j && i / 2 == j / 2 { 1.0 } else { 0.0 });
        assert!(matches!(WeightedGraph::new(two_edges), Err(Error::DisconnectedGraph)));
        assert!(matches!(
            recover_adjacency(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::NonPositiveFirstEigenvector(1))
        ));
    }

    #[test]
    fn two_by_two_eigendecomposition_signs() {
        let (w, omega) = full_eigendecomposition(&dmatrix![1.0, -1.0; -1.0, 1.0]).unwrap();
        assert!((omega[0]).abs() < 1e-14 && (omega[1] - 2.0).abs() < 1e-14);
        let h = 0.5f64.sqrt();
        assert!(w[(0, 0)] > 0.0 && w[(1, 0)] > 0.0);
        assert!((w[(0, 0)] - h).abs() < 1e-12);
        // Both entries of the second column have equal magnitude; the first wins the tie.
        assert!((w[(0, 1)] - h).abs() < 1e-12 && (w[(1, 1)] + h).abs() < 1e-12);
    }

    #[test]
    fn spiked_reconstruct_identity_columns() {
        let n = 5;
        let q = DMatrix::from_fn(n, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let mu = spiked_mean(&q, &[0.0, 0.0], 1.0);
        assert_eq!(mu, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0, 1.0])));
    }

    #[test]
    fn spiked_reconstruct_full_rank_ignores_theta() {
        let lap = build_laplacian(&triangle()).unwrap();
        let (w, omega) = full_eigendecomposition(&lap.l).unwrap();
        let mu = spiked_mean(&w, omega.as_slice(), 0.37);
        assert!((mu - &lap.l).amax() < 1e-12);
    }

    #[test]
    fn cut_loss_examples() {
        let cliques = DMatrix::from_fn(6, 6, |i, j| if i != j && i / 3 == j / 3 { 1.0 } else { 0.0 });
        assert_eq!(normalized_cut_loss(&cliques, &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
        assert!(matches!(
            normalized_cut_loss(&dmatrix![0.0, 1.0; 1.0, 0.0], &[0, 1]),
            Err(Error::DegenerateDenominator)
        ));
        assert!(matches!(
            normalized_cut_loss(&cliques, &[0, 0, 0, 2, 2, 2]),
            Err(Error::EmptyBlock(1))
        ));
    }

    #[test]
    fn cheeger_examples() {
        assert_eq!(cheeger_bound(2, &[0.0, 0.0]), 0.0);
        assert!((cheeger_bound(2, &[0.0, 0.5]) - 1.0).abs() < 1e-15);
        assert!((cheeger_bound(4, &[0.0, 0.0, 0.0, 0.01]) - 1.109_035_488_895_912_5).abs() < 1e-12);
    }

    #[test]
    fn subspace_distance_is_zero_under_permutation_and_sign() {
        let lap = build_laplacian(&triangle()).unwrap();
        let (w, _) = full_eigendecomposition(&lap.l).unwrap();
        let qa = w.columns(0, 2).clone_owned();
        let mut qb = DMatrix::zeros(3, 2);
        qb.set_column(0, &(-qa.column(1)));
        qb.set_column(1, &qa.column(0));
        assert!(subspace_distance(&qa, &qa).unwrap() < 1e-12);
        assert!(subspace_distance(&qa, &qb).unwrap() < 1e-12);
        assert!(subspace_distance(&qa, &DMatrix::zeros(3, 1)).is_err());
    }
}
