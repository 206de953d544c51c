//! Parameter state of the hierarchical model, hyperparameters,
//! initialization and the log joint density.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{logpdf_truncnorm, sample_dirichlet, sample_truncnorm, TruncatedNormalParams};
use crate::error::{Error, Result};
use crate::graph::{fix_signs, spiked_mean, NormalizedLaplacian, SpikedDecomposition};
use crate::linalg::{orthonormalize_columns, sorted_symmetric_eigen, symmetric_eigenvalues};
use crate::stiefel::{sample_uniform_stiefel_star, StiefelPoint};

/// Clipping applied to spectral initial values so they sit inside `(0, 2)`.
pub const INIT_CLIP: f64 = 1e-6;

/// Which exponent of `σ²_e` the noise-variance update and the log joint use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Sigma2ShapeRule {
    /// `S n(n+1)/4`, matching the likelihood with the augmented diagonal.
    #[default]
    Likelihood,
    /// `n² S / 2`, the shape printed with the sampling steps.
    Supplement,
}

impl Sigma2ShapeRule {
    /// Power of `(σ²_e)^{-1}` contributed by one graph.
    pub fn per_graph_exponent(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Sigma2ShapeRule::Likelihood => n * (n + 1.0) / 4.0,
            Sigma2ShapeRule::Supplement => n * n / 2.0,
        }
    }
}

/// How graphs are assigned to dictionary atoms at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AssignmentInit {
    /// k-means on the graphs' spectral projectors, with the number of
    /// groups (at most `g`) chosen by mean silhouette.
    #[default]
    Spread,
    /// Draw from the symmetric Dirichlet prior weights.
    Prior,
    /// Every graph on the first atom.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Eigendecomposition of the observed Laplacians.
    #[default]
    Spectral,
    /// Draws from the prior with a large noise variance; used to check
    /// that sweeps climb the log joint.
    Dispersed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub t: usize,
    pub g: usize,
    pub alpha0: f64,
    pub mu_theta: f64,
    /// Inverse-gamma prior on σ²_θ, σ²_λ0 and σ²_λ1.
    pub ig_shape: f64,
    pub ig_rate: f64,
    /// Beta prior on w.
    pub w_prior: (f64, f64),
    /// Inverse-gamma prior on σ²_e.
    pub sigma2_e_prior: (f64, f64),
    /// Starting value of the three variance hyperparameters.
    pub init_variance: f64,
    pub shape_rule: Sigma2ShapeRule,
    pub assignment_init: AssignmentInit,
    pub init: InitStrategy,
    /// Resample w and the three variances each sweep.
    pub update_hyperpriors: bool,
}

impl HyperParams {
    pub fn new(t: usize) -> Self {
        HyperParams {
            t,
            g: 30,
            alpha0: 0.1,
            mu_theta: 1.0,
            ig_shape: 2.0,
            ig_rate: 0.1,
            w_prior: (1.0, 1.0),
            sigma2_e_prior: (0.01, 0.01),
            init_variance: 0.1,
            shape_rule: Sigma2ShapeRule::Likelihood,
            assignment_init: AssignmentInit::Spread,
            init: InitStrategy::Spectral,
            update_hyperpriors: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha0", self.alpha0),
            ("ig_shape", self.ig_shape),
            ("ig_rate", self.ig_rate),
            ("w_prior.0", self.w_prior.0),
            ("w_prior.1", self.w_prior.1),
            ("sigma2_e_prior.0", self.sigma2_e_prior.0),
            ("sigma2_e_prior.1", self.sigma2_e_prior.1),
            ("init_variance", self.init_variance),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
        }
        if self.t < 2 {
            return Err(Error::InvalidParam(format!("T must be at least 2, got {}", self.t)));
        }
        if self.g < 1 {
            return Err(Error::InvalidParam("g must be at least 1".into()));
        }
        if !(self.mu_theta > 0.0 && self.mu_theta < 2.0) {
            return Err(Error::InvalidParam(format!("mu_theta must lie in (0, 2), got {}", self.mu_theta)));
        }
        Ok(())
    }
}

/// Observed Laplacians with spectral bounds cached for the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub graphs: Vec<NormalizedLaplacian>,
    n: usize,
    /// Smallest and largest eigenvalue of each observed `L`.
    bounds: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn new(graphs: Vec<NormalizedLaplacian>) -> Result<Self> {
        let n = graphs.first().map_or(0, |g| g.n());
        if let Some(g) = graphs.iter().find(|g| g.n() != n) {
            return Err(Error::DimensionMismatch(format!(
                "graphs must share n: found {} and {}",
                n,
                g.n()
            )));
        }
        let bounds = graphs
            .iter()
            .map(|g| {
                let ev = symmetric_eigenvalues(&g.l);
                (ev[0], ev[ev.len() - 1])
            })
            .collect();
        Ok(Dataset { graphs, n, bounds })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn observed(&self, s: usize) -> &DMatrix<f64> {
        &self.graphs[s].l
    }

    pub fn spectral_bounds(&self, s: usize) -> (f64, f64) {
        self.bounds[s]
    }

    /// Observed Laplacian of graph `s` with the augmented diagonal.
    pub fn working(&self, s: usize, diag: &[f64]) -> DMatrix<f64> {
        let mut l = self.graphs[s].l.clone();
        for (i, &d) in diag.iter().enumerate() {
            l[(i, i)] = d;
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    /// Dictionary atom index, 0-based.
    pub z: usize,
    pub lambda: Vec<f64>,
    pub eta: Vec<bool>,
    pub theta: f64,
    /// Augmented diagonal of the working Laplacian.
    pub diag: Vec<f64>,
}

impl GraphState {
    pub fn kappa(&self) -> usize {
        self.eta.iter().filter(|&&e| e).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryState {
    pub atoms: Vec<StiefelPoint>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub dict: DictionaryState,
    pub graphs: Vec<GraphState>,
    pub sigma2_e: f64,
    pub w: f64,
    pub sigma2_theta: f64,
    pub sigma2_lambda0: f64,
    pub sigma2_lambda1: f64,
}

impl ChainState {
    pub fn q(&self, s: usize) -> &DMatrix<f64> {
        self.dict.atoms[self.graphs[s].z].matrix()
    }

    /// `μ_L` of graph `s`.
    pub fn mean(&self, s: usize) -> DMatrix<f64> {
        let g = &self.graphs[s];
        spiked_mean(self.q(s), &g.lambda, g.theta)
    }

    pub fn decomposition(&self, s: usize) -> SpikedDecomposition {
        let g = &self.graphs[s];
        SpikedDecomposition {
            q: self.q(s).clone(),
            lambda: g.lambda.clone().into(),
            theta: g.theta,
            eta: g.eta.clone(),
        }
    }

    /// Prior variance of a spike given its indicator.
    pub fn lambda_variance(&self, eta: bool) -> f64 {
        if eta {
            self.sigma2_lambda1
        } else {
            self.sigma2_lambda0
        }
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0; self.dict.atoms.len()];
        for g in &self.graphs {
            counts[g.z] += 1;
        }
        counts
    }

    pub fn occupied_atoms(&self) -> usize {
        self.occupancy().iter().filter(|&&c| c > 0).count()
    }

    /// Checks every type invariant of the state.
    pub fn validate(&self, n: usize, hp: &HyperParams) -> Result<()> {
        if self.dict.atoms.len() != hp.g || self.dict.pi.len() != hp.g {
            return Err(Error::DimensionMismatch(format!("expected {} atoms", hp.g)));
        }
        for a in &self.dict.atoms {
            StiefelPoint::new(a.matrix().clone())?;
            if a.n() != n || a.t() != hp.t {
                return Err(Error::DimensionMismatch("atom shape".into()));
            }
        }
        if (self.dict.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.dict.pi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidParam("mixture weights are not on the simplex".into()));
        }
        for (s, g) in self.graphs.iter().enumerate() {
            if g.z >= hp.g || g.diag.len() != n || g.diag.iter().any(|d| !d.is_finite()) {
                return Err(Error::InvalidParam(format!("graph {s} state is malformed")));
            }
            self.decomposition(s).validate()?;
        }
        let positive = [self.sigma2_e, self.sigma2_theta, self.sigma2_lambda0, self.sigma2_lambda1];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) || !(self.w > 0.0 && self.w < 1.0) {
            return Err(Error::InvalidParam("variance or weight outside its support".into()));
        }
        Ok(())
    }
}

fn clip_band(x: f64) -> f64 {
    x.clamp(INIT_CLIP, 2.0 - INIT_CLIP)
}

/// First `t` eigenvectors with the sign convention, repaired so the first
/// column is strictly positive.
fn positive_eigenbasis(w: &DMatrix<f64>, t: usize) -> Option<DMatrix<f64>> {
    let mut q = w.columns(0, t).clone_owned();
    if q.column(0).iter().all(|&x| x > 0.0) {
        return Some(q);
    }
    let floor = 1e-8 / (q.nrows() as f64).sqrt();
    q.column_mut(0).apply(|x: &mut f64| *x = x.abs().max(floor));
    let q = orthonormalize_columns(&q)?;
    q.column(0).iter().all(|&x| x > 0.0).then_some(q)
}

/// Lloyd's k-means with k-means++ seeding on the rows of `x`; returns labels.
pub fn kmeans<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, restarts: usize, rng: &mut R) -> Vec<usize> {
    let (m, d) = x.shape();
    assert!(k >= 1 && k <= m, "k-means needs 1 <= k <= rows");
    let dist2 = |i: usize, c: &DMatrix<f64>, j: usize| -> f64 {
        (0..d).map(|t| (x[(i, t)] - c[(j, t)]).powi(2)).sum()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = DMatrix::zeros(k, d);
        let first = rng.random_range(0..m);
        centers.row_mut(0).copy_from(&x.row(first));
        let mut nearest: Vec<f64> = (0..m).map(|i| dist2(i, &centers, 0)).collect();
        for c in 1..k {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = m - 1;
                for (i, &w) in nearest.iter().enumerate() {
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            } else {
                rng.random_range(0..m)
            };
            centers.row_mut(c).copy_from(&x.row(pick));
            for i in 0..m {
                nearest[i] = nearest[i].min(dist2(i, &centers, c));
            }
        }
        let mut labels = vec![0; m];
        for _ in 0..300 {
            let mut changed = false;
            for i in 0..m {
                let mut bl = 0;
                let mut bd = f64::INFINITY;
                for c in 0..k {
                    let dd = dist2(i, &centers, c);
                    if dd < bd {
                        bd = dd;
                        bl = c;
                    }
                }
                if labels[i] != bl {
                    labels[i] = bl;
                    changed = true;
                }
            }
            let mut sums = DMatrix::zeros(k, d);
            let mut counts = vec![0usize; k];
            for i in 0..m {
                counts[labels[i]] += 1;
                let mut row = sums.row_mut(labels[i]);
                row += x.row(i);
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let mut row = centers.row_mut(c);
                    row.copy_from(&(sums.row(c) / counts[c] as f64));
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..m).map(|i| dist2(i, &centers, labels[i])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

/// Mean silhouette of a labeling of the rows of `x`; singletons score 0.
pub fn silhouette(x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let m = x.nrows();
    let k = labels.iter().copied().max().map_or(0, |v| v + 1);
    let dist: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| (x.row(i) - x.row(j)).norm()).collect())
        .collect();
    let mut total = 0.0;
    for i in 0..m {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..m {
            if j != i {
                sums[labels[j]] += dist[i][j];
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / m as f64
}

/// k-means over `2..=min(rows - 1, g)` groups keeping the labeling with the
/// best mean silhouette. Falls back to a single group when no split scores
/// above zero.
fn select_clustering<R: Rng + ?Sized>(x: &DMatrix<f64>, g: usize, rng: &mut R) -> Vec<usize> {
    let m = x.nrows();
    let kmax = (m.saturating_sub(1)).min(g);
    if m <= 2 {
        return (0..m).map(|i| i.min(g - 1)).collect();
    }
    let mut best = (0.0, vec![0; m]);
    for k in 2..=kmax {
        let labels = kmeans(x, k, 5, rng);
        let score = silhouette(x, &labels);
        if score > best.0 {
            best = (score, labels);
        }
    }
    best.1
}

fn initial_assignments<R: Rng + ?Sized>(
    eigvecs: &[DMatrix<f64>],
    hp: &HyperParams,
    pi: &[f64],
    rng: &mut R,
) -> Vec<usize> {
    let s_count = eigvecs.len();
    match hp.assignment_init {
        AssignmentInit::Single => vec![0; s_count],
        AssignmentInit::Prior => (0..s_count)
            .map(|_| {
                let mut u = rng.random::<f64>();
                for (l, &p) in pi.iter().enumerate() {
                    if u < p {
                        return l;
                    }
                    u -= p;
                }
                pi.len() - 1
            })
            .collect(),
        AssignmentInit::Spread => {
            // Projectors onto the leading T-dimensional eigenspaces are
            // invariant to sign and rotation, so cluster on those.
            let n = eigvecs[0].nrows();
            let mut feats = DMatrix::zeros(s_count, n * n);
            for (s, w) in eigvecs.iter().enumerate() {
                let q = w.columns(0, hp.t);
                let p = &q * q.transpose();
                feats.row_mut(s).copy_from_slice(p.as_slice());
            }
            select_clustering(&feats, hp.g, rng)
        }
    }
}

pub fn init_chain<R: Rng + ?Sized>(data: &Dataset, hp: &HyperParams, rng: &mut R) -> Result<ChainState> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::DimensionMismatch("no graphs to fit".into()));
    }
    let n = data.n();
    let t = hp.t;
    if t > n - 1 {
        return Err(Error::TooManySpikes { spikes: t, n });
    }
    let s_count = data.len();
    let v0 = hp.init_variance;
    let pi = sample_dirichlet(&vec![hp.alpha0 / hp.g as f64; hp.g], rng)?;

    if hp.init == InitStrategy::Dispersed {
        let atoms: Vec<StiefelPoint> = (0..hp.g).map(|_| sample_uniform_stiefel_star(n, t, rng)).collect();
        let eigvecs: Vec<DMatrix<f64>> = atoms.iter().map(|a| a.matrix().clone()).collect();
        let z = initial_assignments(&eigvecs[..s_count.min(hp.g)], hp, &pi, rng);
        let graphs = (0..s_count)
            .map(|s| {
                let mut lambda = vec![0.0; t];
                let mut eta = vec![true; t];
                for k in 1..t {
                    eta[k] = rng.random::<f64>() < 0.5;
                    let mean = if eta[k] { 0.0 } else { hp.mu_theta };
                    lambda[k] = sample_truncnorm(&TruncatedNormalParams::on_unit_band(mean, v0), rng);
                }
                let theta = sample_truncnorm(&TruncatedNormalParams::on_unit_band(hp.mu_theta, v0), rng);
                GraphState {
                    z: z.get(s).copied().unwrap_or(s % hp.g),
                    lambda,
                    eta,
                    theta,
                    diag: vec![1.0; n],
                }
            })
            .collect();
        return Ok(ChainState {
            dict: DictionaryState { atoms, pi },
            graphs,
            sigma2_e: 1.0,
            w: 0.5,
            sigma2_theta: v0,
            sigma2_lambda0: v0,
            sigma2_lambda1: v0,
        });
    }

    let mut eigvecs = Vec::with_capacity(s_count);
    let mut graphs = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let (w, omega) = sorted_symmetric_eigen(data.observed(s))?;
        let mut lambda = vec![0.0; t];
        let mut eta = vec![true; t];
        for k in 1..t {
            lambda[k] = clip_band(omega[k]);
            eta[k] = lambda[k] < hp.mu_theta / 2.0;
        }
        let rest = &omega[t..];
        let theta = clip_band(rest.iter().sum::<f64>() / rest.len() as f64);
        let mut w = w;
        fix_signs(&mut w);
        eigvecs.push(w);
        graphs.push(GraphState {
            z: 0,
            lambda,
            eta,
            theta,
            diag: vec![1.0; n],
        });
    }
    let z = initial_assignments(&eigvecs, hp, &pi, rng);
    let mut atoms = Vec::with_capacity(hp.g);
    for l in 0..hp.g {
        let members: Vec<usize> = (0..s_count).filter(|&s| z[s] == l).collect();
        let atom = if members.is_empty() {
            sample_uniform_stiefel_star(n, t, rng)
        } else {
            let mut mean = DMatrix::zeros(n, n);
            for &s in &members {
                mean += data.observed(s);
            }
            mean /= members.len() as f64;
            let (mut w, _) = sorted_symmetric_eigen(&mean)?;
            fix_signs(&mut w);
            match positive_eigenbasis(&w, t) {
                Some(q) => StiefelPoint::new(q)?,
                None => sample_uniform_stiefel_star(n, t, rng),
            }
        };
        atoms.push(atom);
    }
    for (g, &zs) in graphs.iter_mut().zip(&z) {
        g.z = zs;
    }
    let mut state = ChainState {
        dict: DictionaryState { atoms, pi },
        graphs,
        sigma2_e: 1.0,
        w: 0.5,
        sigma2_theta: v0,
        sigma2_lambda0: v0,
        sigma2_lambda1: v0,
    };
    let resid: f64 = (0..s_count)
        .map(|s| (data.working(s, &state.graphs[s].diag) - state.mean(s)).norm_squared())
        .sum();
    state.sigma2_e = (resid / (s_count as f64 * (n * (n + 1)) as f64)).max(1e-8);
    Ok(state)
}

pub fn log_inverse_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Squared Frobenius residual `‖L − μ_L‖²` of graph `s`.
pub fn residual_norm2(state: &ChainState, data: &Dataset, s: usize) -> f64 {
    (data.working(s, &state.graphs[s].diag) - state.mean(s)).norm_squared()
}

/// Log likelihood of graph `s` up to constants free of parameters.
pub fn log_likelihood_graph(state: &ChainState, data: &Dataset, s: usize, rule: Sigma2ShapeRule) -> f64 {
    let n = data.n();
    -residual_norm2(state, data, s) / (4.0 * state.sigma2_e) - rule.per_graph_exponent(n) * state.sigma2_e.ln()
}

/// Log prior of one graph's spectral parameters.
pub fn log_prior_graph(state: &ChainState, hp: &HyperParams, s: usize) -> Result<f64> {
    let g = &state.graphs[s];
    let mut lp = logpdf_truncnorm(g.theta, &TruncatedNormalParams::on_unit_band(hp.mu_theta, state.sigma2_theta))?;
    for k in 1..g.lambda.len() {
        let eta = g.eta[k];
        let mean = if eta { 0.0 } else { hp.mu_theta };
        lp += logpdf_truncnorm(g.lambda[k], &TruncatedNormalParams::on_unit_band(mean, state.lambda_variance(eta)))?;
        lp += if eta { state.w.ln() } else { (1.0 - state.w).ln() };
    }
    lp += state.dict.pi[g.z].ln();
    Ok(lp)
}

/// Log joint density of the state and data, up to an additive constant.
pub fn log_joint(state: &ChainState, data: &Dataset, hp: &HyperParams) -> Result<f64> {
    let mut lj = 0.0;
    for s in 0..data.len() {
        lj += log_likelihood_graph(state, data, s, hp.shape_rule);
        lj += log_prior_graph(state, hp, s)?;
    }
    let a = hp.alpha0 / hp.g as f64;
    lj += state.dict.pi.iter().map(|p| (a - 1.0) * p.ln()).sum::<f64>();
    let (wa, wb) = hp.w_prior;
    lj += (wa - 1.0) * state.w.ln() + (wb - 1.0) * (1.0 - state.w).ln();
    for v in [state.sigma2_theta, state.sigma2_lambda0, state.sigma2_lambda1] {
        lj += log_inverse_gamma(v, hp.ig_shape, hp.ig_rate);
    }
    lj += log_inverse_gamma(state.sigma2_e, hp.sigma2_e_prior.0, hp.sigma2_e_prior.1);
    if lj.is_finite() {
        Ok(lj)
    } else {
        Err(Error::NonFiniteLogDensity)
    }
}
