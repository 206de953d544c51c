#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use spiked_laplacian::distributions::{logpdf_truncnorm, TruncatedNormalParams};
use spiked_laplacian::gibbs::column_operators;
use spiked_laplacian::graph::{build_laplacian, full_eigendecomposition, NormalizedLaplacian, WeightedGraph};
use spiked_laplacian::model::{init_chain, log_joint, log_likelihood_graph, ChainState, Dataset, HyperParams, Sigma2ShapeRule};
use spiked_laplacian::stiefel::StiefelPoint;
use spiked_laplacian::ChainRng;

/// Dense graph with weights in `(0.1, 1.1)`.
pub fn random_adjacency<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = 0.1 + rng.random::<f64>();
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    a
}

pub fn random_laplacian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> NormalizedLaplacian {
    build_laplacian(&WeightedGraph::new(random_adjacency(n, rng)).unwrap()).unwrap()
}

/// Small chain state with moderate noise so every conditional is spread over
/// a few grid cells or more.
pub struct Fixture {
    pub data: Dataset,
    pub hp: HyperParams,
    pub state: ChainState,
}

pub fn fixture(n: usize, graphs: usize, t: usize, atoms: usize, seed: u64) -> Fixture {
    let mut rng = ChainRng::seed_from_u64(seed);
    let data = Dataset::new((0..graphs).map(|_| random_laplacian(n, &mut rng)).collect()).unwrap();
    let mut hp = HyperParams::new(t);
    hp.g = atoms;
    let mut state = init_chain(&data, &hp, &mut rng).unwrap();
    state.sigma2_e = 0.02 + 0.03 * rng.random::<f64>();
    state.sigma2_lambda1 = 0.2;
    state.sigma2_lambda0 = 0.1;
    state.sigma2_theta = 0.15;
    state.w = 0.4;
    for g in state.graphs.iter_mut() {
        for k in 1..t {
            g.lambda[k] = 0.2 + 1.6 * rng.random::<f64>();
            g.eta[k] = rng.random::<bool>();
        }
        g.theta = 0.3 + 1.4 * rng.random::<f64>();
        g.z = rng.random_range(0..atoms);
    }
    Fixture { data, hp, state }
}

/// Midpoints of a uniform grid on `(0, 2)`.
pub fn band_grid(cells: usize) -> Vec<f64> {
    let h = 2.0 / cells as f64;
    (0..cells).map(|i| (i as f64 + 0.5) * h).collect()
}

/// Normalizes log weights into probabilities.
pub fn normalize_log(lw: &[f64]) -> Vec<f64> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Oracle: the log joint evaluated along one coordinate, normalized on the grid.
pub fn joint_slice(f: &Fixture, grid: &[f64], set: impl Fn(&mut ChainState, f64)) -> Vec<f64> {
    let mut st = f.state.clone();
    let lw: Vec<f64> = grid
        .iter()
        .map(|&x| {
            set(&mut st, x);
            log_joint(&st, &f.data, &f.hp).unwrap()
        })
        .collect();
    normalize_log(&lw)
}

/// Sampler density of a truncated normal on the same grid.
pub fn truncnorm_on_grid(p: &TruncatedNormalParams, grid: &[f64]) -> Vec<f64> {
    let lw: Vec<f64> = grid.iter().map(|&x| logpdf_truncnorm(x, p).unwrap()).collect();
    normalize_log(&lw)
}

/// Oracle assignment probabilities of graph `s`: `exp(log_joint)` integrated
/// over `(λ_2, θ)` on a `cells × cells` grid, for `T = 2`.
pub fn collapsed_assignment_oracle(f: &Fixture, s: usize, cells: usize) -> Vec<f64> {
    assert_eq!(f.hp.t, 2, "oracle integrates one spike and theta");
    let grid = band_grid(cells);
    let atoms = f.state.dict.atoms.len();
    let mut per_atom = Vec::with_capacity(atoms);
    for l in 0..atoms {
        let mut st = f.state.clone();
        st.graphs[s].z = l;
        let mut vals = Vec::with_capacity(cells * cells);
        for &lam in &grid {
            for &th in &grid {
                st.graphs[s].lambda[1] = lam;
                st.graphs[s].theta = th;
                vals.push(log_joint(&st, &f.data, &f.hp).unwrap());
            }
        }
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        per_atom.push(m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln());
    }
    normalize_log(&per_atom)
}

/// Histogram of draws over `bins` equal cells of `(0, 2)`.
pub fn histogram(draws: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &x in draws {
        let b = ((x / 2.0) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        h[b] += 1.0;
    }
    let total = draws.len() as f64;
    h.into_iter().map(|c| c / total).collect()
}

/// Groups a fine probability grid into `bins` coarse cells.
pub fn coarsen(p: &[f64], bins: usize) -> Vec<f64> {
    let per = p.len() / bins;
    p.chunks(per).map(|c| c.iter().sum()).collect()
}

/// Mann–Kendall statistic `S` and its normal score (no tie correction).
pub fn mann_kendall(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += (x[j] - x[i]).signum();
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    (s, z)
}

/// Mean and batch-means standard error.
pub fn batch_mean_se(x: &[f64], batches: usize) -> (f64, f64) {
    let per = x.len() / batches;
    let means: Vec<f64> = x.chunks(per).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Kept independent of the library's eigensolver.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let sign = if tau >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Random connected graph where each edge is kept with probability
/// `density`; a path through all vertices guarantees connectivity.
pub fn sparse_adjacency<R: Rng + ?Sized>(n: usize, density: f64, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || rng.random::<f64>() < density {
                let w = 0.1 + rng.random::<f64>();
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    a
}

/// Spiked decomposition read off the eigenpairs of `l`: the `t` smallest
/// eigenvectors, their eigenvalues (the first pinned to zero), the mean of
/// the remaining spectrum as θ, and the first `kappa` spikes switched on.
pub fn eigen_decomposition(l: &DMatrix<f64>, t: usize, kappa: usize) -> spiked_laplacian::graph::SpikedDecomposition {
    use spiked_laplacian::graph::{full_eigendecomposition, SpikedDecomposition};
    let n = l.nrows();
    let (w, omega) = full_eigendecomposition(l).unwrap();
    let q = w.columns(0, t).clone_owned();
    let mut lambda = nalgebra::DVector::zeros(t);
    for k in 1..t {
        lambda[k] = omega[k].clamp(1e-12, 2.0 - 1e-12);
    }
    let theta = if t < n { omega.iter().skip(t).sum::<f64>() / (n - t) as f64 } else { 1.0 };
    let eta = (0..t).map(|k| k < kappa).collect();
    SpikedDecomposition::new(q, lambda, theta.clamp(1e-6, 2.0 - 1e-6), eta).unwrap()
}

/// Gaussian log density of `r` under `N(m, Σ)`, dropping `U`-free constants
/// is not allowed here, so the full form is used.
pub fn gaussian_logpdf(r: &nalgebra::DVector<f64>, m: &nalgebra::DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let d = r - m;
    let sol = chol.solve(&d);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    -0.5 * (d.dot(&sol) + logdet + r.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Augmented log density `log p(L | U) + log p(R | U)` at atom `u`.
pub fn augmented_log_density(f: &Fixture, s: usize, u: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let mut st = f.state.clone();
    let z = st.graphs[s].z;
    st.dict.atoms[z] = StiefelPoint::new(u.clone()).unwrap();
    let g = &st.graphs[s];
    let l = f.data.working(s, &g.diag);
    let ev = full_eigendecomposition(&l).unwrap().1;
    let ops = column_operators(g.theta, &g.lambda, (ev[0], ev[ev.len() - 1]));
    let n = u.nrows();
    let mut out = log_likelihood_graph(&st, &f.data, s, Sigma2ShapeRule::Likelihood);
    for (k, op) in ops.iter().enumerate() {
        let ft = (DMatrix::identity(n, n) * g.theta - &l) * op.sign + DMatrix::identity(n, n) * op.shift;
        let mean = &ft * u.column(k) * op.scale;
        let cov = &ft * (st.sigma2_e * op.scale);
        out += gaussian_logpdf(&r.row(k).transpose(), &mean, &cov);
    }
    out
}

/// `λ_1 = 0` fixed; `(λ_2, θ)` integrated on a midpoint grid.
pub fn marginal_grid(q: &DMatrix<f64>, l: &DMatrix<f64>, s2: f64, cells: usize) -> f64 {
    let n = q.nrows();
    let grid = band_grid(cells);
    let h = 2.0 / cells as f64;
    let proj = q * q.transpose();
    let base = -((n * (n + 1)) as f64) / 4.0 * s2.ln();
    let u2 = q.column(1) * q.column(1).transpose();
    let rest = DMatrix::identity(n, n) - &proj;
    let mut vals = Vec::with_capacity(cells * cells);
    for &lam in &grid {
        for &th in &grid {
            let mu = &u2 * lam + &rest * th;
            vals.push(base - (l - mu).norm_squared() / (4.0 * s2));
        }
    }
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (vals.iter().map(|v| (v - m).exp()).sum::<f64>() * h * h).ln()
}
