//! The Gibbs sweep: augmentation, dictionary, assignments, weights,
//! spectral parameters, diagonal, noise variance and hyperpriors.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    log_unit_band_mass, logpdf_truncnorm, sample_beta, sample_dirichlet, sample_inverse_gamma, sample_truncnorm,
    standard_normal_matrix, TruncatedNormalParams,
};
use crate::error::{Error, Result, SweepStep};
use crate::linalg::cholesky_with_jitter;
use crate::model::{log_joint, residual_norm2, ChainState, Dataset, HyperParams};
use crate::rng::ChainRng;
use crate::special::log_norm_cdf_diff;
use crate::stiefel::{sample_matrix_langevin, sample_uniform_stiefel_star, LangevinParams, StiefelPoint};

/// Smallest eigenvalue kept by the shifted operators in the augmentation.
pub const DEFINITENESS_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub augment: f64,
    pub dictionary: f64,
    pub assignment: f64,
    pub weights: f64,
    pub spectral: f64,
    pub diagonal: f64,
    pub noise: f64,
    pub hyperpriors: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Wall-clock seconds per step.
    pub timings: StepTimings,
    pub positivity_rejections: usize,
    /// Atoms whose first column stayed put after the rejection cap.
    pub positivity_exhausted: usize,
    /// Graphs whose θ was redrawn after a failed factorization.
    pub theta_redraws: usize,
    /// Hyperprior variance proposals rejected by the truncation correction.
    pub hyperprior_rejections: usize,
    pub log_joint: f64,
}

/// Operator used for column `k` of the augmentation: `g̃ (sF + aI)` with
/// `g̃ = |θ − λ_k|` and `s = sign(θ − λ_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnOperator {
    pub sign: f64,
    pub shift: f64,
    pub scale: f64,
}

/// Shift making `s(θI − L) + aI` positive definite, from Weyl bounds on the
/// working Laplacian; zero when the unshifted operator already is.
pub fn definiteness_shift(sign: f64, theta: f64, (lo, hi): (f64, f64)) -> f64 {
    let min_eig = if sign > 0.0 { theta - hi } else { lo - theta };
    if min_eig >= DEFINITENESS_MARGIN {
        0.0
    } else {
        DEFINITENESS_MARGIN - min_eig
    }
}

/// Eigenvalue bounds of the working Laplacian of graph `s`.
fn working_bounds(data: &Dataset, s: usize, diag: &[f64]) -> (f64, f64) {
    let obs = data.observed(s);
    let drift = diag
        .iter()
        .enumerate()
        .map(|(i, d)| (d - obs[(i, i)]).abs())
        .fold(0.0, f64::max);
    let (lo, hi) = data.spectral_bounds(s);
    (lo - drift, hi + drift)
}

pub fn column_operators(theta: f64, lambda: &[f64], bounds: (f64, f64)) -> Vec<ColumnOperator> {
    lambda
        .iter()
        .map(|&lk| {
            let g = theta - lk;
            let sign = if g >= 0.0 { 1.0 } else { -1.0 };
            ColumnOperator {
                sign,
                shift: definiteness_shift(sign, theta, bounds),
                scale: g.abs(),
            }
        })
        .collect()
}

/// Draws the augmentation `R_s` (T×n) given the current atom of graph `s`.
///
/// Row `k` is `N(g̃ F̃ u_k, σ² g̃ F̃)` with `F̃ = s(θI − L) + aI`. Combined with
/// the spectral term of the likelihood, the quadratic in `U` cancels and the
/// conditional of the atom is linear-exponential in `Σ_s R_sᵀ / σ²`. The shift
/// `a` only offsets the quadratic by a constant since `u_kᵀu_k = 1`.
pub fn augment_r<R: Rng + ?Sized>(s: usize, state: &ChainState, data: &Dataset, rng: &mut R) -> Result<DMatrix<f64>> {
    let g = &state.graphs[s];
    let u = state.q(s);
    let (n, t) = u.shape();
    let l = data.working(s, &g.diag);
    let ops = column_operators(g.theta, &g.lambda, working_bounds(data, s, &g.diag));
    let mut r = DMatrix::zeros(t, n);
    let mut factors: Vec<(f64, f64, DMatrix<f64>, DMatrix<f64>)> = Vec::with_capacity(2);
    for (k, op) in ops.iter().enumerate() {
        if op.scale == 0.0 {
            continue;
        }
        let idx = match factors.iter().position(|(sg, sh, _, _)| *sg == op.sign && *sh == op.shift) {
            Some(i) => i,
            None => {
                let mut f = &l * (-op.sign);
                for i in 0..n {
                    f[(i, i)] += op.sign * g.theta + op.shift;
                }
                let chol = cholesky_with_jitter(&f)?.l();
                factors.push((op.sign, op.shift, f, chol));
                factors.len() - 1
            }
        };
        let (_, _, f, chol) = &factors[idx];
        let mean = f * u.column(k) * op.scale;
        let z = standard_normal_matrix(n, 1, rng);
        let noise = chol * z * (state.sigma2_e * op.scale).sqrt();
        r.row_mut(k).copy_from(&(mean + noise).transpose());
    }
    Ok(r)
}

/// Langevin natural parameter `Σ_s R_sᵀ/σ² (+ MΩ)` of atom `l`.
pub fn atom_concentration(
    l: usize,
    state: &ChainState,
    rs: &[DMatrix<f64>],
    prior: Option<&DMatrix<f64>>,
) -> Option<DMatrix<f64>> {
    let mut c: Option<DMatrix<f64>> = prior.cloned();
    for (s, g) in state.graphs.iter().enumerate() {
        if g.z == l {
            let term = rs[s].transpose() / state.sigma2_e;
            c = Some(match c {
                Some(acc) => acc + term,
                None => term,
            });
        }
    }
    c
}

/// Atom update: one Langevin transition for occupied atoms, a fresh prior
/// draw for empty ones.
pub fn update_dictionary_atom<R: Rng + ?Sized>(
    l: usize,
    state: &ChainState,
    rs: &[DMatrix<f64>],
    hp: &HyperParams,
    prior: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> Result<(StiefelPoint, usize, bool)> {
    let current = &state.dict.atoms[l];
    let occupied = state.graphs.iter().any(|g| g.z == l);
    if !occupied && prior.is_none() {
        return Ok((sample_uniform_stiefel_star(current.n(), hp.t, rng), 0, false));
    }
    let c = atom_concentration(l, state, rs, prior).expect("occupied atom or prior present");
    let (next, report) = sample_matrix_langevin(&LangevinParams { c }, current, rng)?;
    Ok((next, report.rejections, report.exhausted))
}

/// Log of `∫_{(0,2)} exp(−Pλ²/2 + bλ) dλ` up to the constant `½ log(2π)`.
fn log_band_integral(precision: f64, linear: f64) -> f64 {
    let mean = linear / precision;
    0.5 * linear * mean - 0.5 * precision.ln() + log_unit_band_mass(mean, 1.0 / precision)
}

/// Unnormalized log assignment weights of graph `s` over all atoms, with the
/// spikes `λ_2..λ_T` and `θ` integrated out under their truncated priors.
pub fn assignment_log_weights(s: usize, state: &ChainState, data: &Dataset, hp: &HyperParams) -> Vec<f64> {
    let g = &state.graphs[s];
    let l = data.working(s, &g.diag);
    let n = data.n();
    let t = hp.t;
    let s2 = state.sigma2_e;
    let trace = l.trace();
    let p_theta = (n - t) as f64 / (2.0 * s2) + 1.0 / state.sigma2_theta;
    state
        .dict
        .atoms
        .iter()
        .enumerate()
        .map(|(idx, atom)| {
            let u = atom.matrix();
            let lu = &l * u;
            let mut lw = state.dict.pi[idx].ln();
            let mut captured = 0.0;
            for k in 0..t {
                let quad = u.column(k).dot(&lu.column(k));
                captured += quad;
                if k == 0 {
                    continue;
                }
                let v = state.lambda_variance(g.eta[k]);
                let prior_mean = if g.eta[k] { 0.0 } else { hp.mu_theta };
                let p = 1.0 / v + 1.0 / (2.0 * s2);
                let b = quad / (2.0 * s2) + prior_mean / v;
                lw += log_band_integral(p, b);
            }
            let b_theta = (trace - captured) / (2.0 * s2) + hp.mu_theta / state.sigma2_theta;
            lw + log_band_integral(p_theta, b_theta)
        })
        .collect()
}

pub fn sample_categorical_log<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &wi) in w.iter().enumerate() {
        if u < wi {
            return i;
        }
        u -= wi;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

pub fn update_assignment<R: Rng + ?Sized>(
    s: usize,
    state: &ChainState,
    data: &Dataset,
    hp: &HyperParams,
    rng: &mut R,
) -> usize {
    sample_categorical_log(&assignment_log_weights(s, state, data, hp), rng)
}

pub fn update_weights<R: Rng + ?Sized>(state: &ChainState, hp: &HyperParams, rng: &mut R) -> Result<Vec<f64>> {
    let a = hp.alpha0 / hp.g as f64;
    let counts = state.occupancy();
    let alpha: Vec<f64> = counts.iter().map(|&c| a + c as f64).collect();
    sample_dirichlet(&alpha, rng)
}

/// Full conditional of `λ_k` as a truncated normal.
pub fn lambda_conditional(s: usize, k: usize, state: &ChainState, data: &Dataset, hp: &HyperParams) -> TruncatedNormalParams {
    let g = &state.graphs[s];
    lambda_conditional_parts(&g.eta, k, state.q(s), &data.working(s, &g.diag), state, hp)
}

fn lambda_conditional_parts(
    eta: &[bool],
    k: usize,
    u: &DMatrix<f64>,
    l: &DMatrix<f64>,
    state: &ChainState,
    hp: &HyperParams,
) -> TruncatedNormalParams {
    let uk = u.column(k);
    let quad = uk.dot(&(l * uk));
    let v = state.lambda_variance(eta[k]);
    let prior_mean = if eta[k] { 0.0 } else { hp.mu_theta };
    let precision = 1.0 / v + 1.0 / (2.0 * state.sigma2_e);
    let linear = quad / (2.0 * state.sigma2_e) + prior_mean / v;
    TruncatedNormalParams::on_unit_band(linear / precision, 1.0 / precision)
}

pub fn update_lambda<R: Rng + ?Sized>(
    s: usize,
    k: usize,
    state: &ChainState,
    data: &Dataset,
    hp: &HyperParams,
    rng: &mut R,
) -> f64 {
    assert!(k >= 1, "the first spike is fixed at zero");
    sample_truncnorm(&lambda_conditional(s, k, state, data, hp), rng)
}

/// `P(η_k = 1 | λ_k, w, σ²)` from the two truncated prior densities.
pub fn eta_probability(lambda: f64, state: &ChainState, hp: &HyperParams) -> Result<f64> {
    let spike = state.w.ln() + logpdf_truncnorm(lambda, &TruncatedNormalParams::on_unit_band(0.0, state.sigma2_lambda1))?;
    let slab = (1.0 - state.w).ln()
        + logpdf_truncnorm(lambda, &TruncatedNormalParams::on_unit_band(hp.mu_theta, state.sigma2_lambda0))?;
    Ok(1.0 / (1.0 + (slab - spike).exp()))
}

pub fn update_eta<R: Rng + ?Sized>(s: usize, k: usize, state: &ChainState, hp: &HyperParams, rng: &mut R) -> Result<bool> {
    assert!(k >= 1, "the first indicator is fixed at one");
    let p = eta_probability(state.graphs[s].lambda[k], state, hp)?;
    Ok(rng.random::<f64>() < p)
}

pub fn theta_conditional(s: usize, state: &ChainState, data: &Dataset, hp: &HyperParams) -> TruncatedNormalParams {
    theta_conditional_parts(state.q(s), &data.working(s, &state.graphs[s].diag), state, hp)
}

fn theta_conditional_parts(u: &DMatrix<f64>, l: &DMatrix<f64>, state: &ChainState, hp: &HyperParams) -> TruncatedNormalParams {
    let lu = l * u;
    let captured: f64 = (0..u.ncols()).map(|k| u.column(k).dot(&lu.column(k))).sum();
    let n = u.nrows();
    let precision = (n - u.ncols()) as f64 / (2.0 * state.sigma2_e) + 1.0 / state.sigma2_theta;
    let linear = (l.trace() - captured) / (2.0 * state.sigma2_e) + hp.mu_theta / state.sigma2_theta;
    TruncatedNormalParams::on_unit_band(linear / precision, 1.0 / precision)
}

pub fn update_theta<R: Rng + ?Sized>(s: usize, state: &ChainState, data: &Dataset, hp: &HyperParams, rng: &mut R) -> f64 {
    sample_truncnorm(&theta_conditional(s, state, data, hp), rng)
}

/// Conditional means of the augmented diagonal, `[Q(Λ − θI)Qᵀ]_ii + θ`.
pub fn diag_means(s: usize, state: &ChainState) -> Vec<f64> {
    let g = &state.graphs[s];
    let u = state.q(s);
    (0..u.nrows())
        .map(|i| {
            let row = u.row(i);
            g.theta + (0..u.ncols()).map(|k| (g.lambda[k] - g.theta) * row[k] * row[k]).sum::<f64>()
        })
        .collect()
}

pub fn update_diag<R: Rng + ?Sized>(s: usize, state: &ChainState, rng: &mut R) -> Vec<f64> {
    let sd = (2.0 * state.sigma2_e).sqrt();
    diag_means(s, state)
        .into_iter()
        .map(|m| m + sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Shape and rate of the inverse-gamma conditional of `σ²_e`.
pub fn sigma2_e_conditional(state: &ChainState, data: &Dataset, hp: &HyperParams) -> (f64, f64) {
    let n = data.n();
    let shape = hp.sigma2_e_prior.0 + data.len() as f64 * hp.shape_rule.per_graph_exponent(n);
    let resid: f64 = (0..data.len()).map(|s| residual_norm2(state, data, s)).sum();
    (shape, hp.sigma2_e_prior.1 + 0.25 * resid)
}

pub fn update_sigma2_e<R: Rng + ?Sized>(state: &ChainState, data: &Dataset, hp: &HyperParams, rng: &mut R) -> Result<f64> {
    let (shape, rate) = sigma2_e_conditional(state, data, hp);
    sample_inverse_gamma(shape, rate, rng)
}

/// Variance of a truncated-normal prior family with fixed mean, updated by an
/// inverse-gamma proposal that ignores truncation and an independence
/// Metropolis correction for the normalizing constants.
fn update_truncated_scale<R: Rng + ?Sized>(
    current: f64,
    mean: f64,
    values: &[f64],
    hp: &HyperParams,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    let m = values.len() as f64;
    let proposal = sample_inverse_gamma(hp.ig_shape + 0.5 * m, hp.ig_rate + 0.5 * ss, rng)?;
    let log_accept = m * (log_unit_band_mass(mean, current) - log_unit_band_mass(mean, proposal));
    if rng.random::<f64>().ln() < log_accept {
        Ok((proposal, true))
    } else {
        Ok((current, false))
    }
}

/// Updates `w`, `σ²_θ`, `σ²_λ0` and `σ²_λ1`; returns rejected proposals.
pub fn update_hyperpriors<R: Rng + ?Sized>(state: &mut ChainState, hp: &HyperParams, rng: &mut R) -> Result<usize> {
    let mut spikes = Vec::new();
    let mut slabs = Vec::new();
    for g in &state.graphs {
        for k in 1..g.lambda.len() {
            if g.eta[k] {
                spikes.push(g.lambda[k]);
            } else {
                slabs.push(g.lambda[k]);
            }
        }
    }
    let (wa, wb) = hp.w_prior;
    state.w = sample_beta(wa + spikes.len() as f64, wb + slabs.len() as f64, rng)?.clamp(1e-12, 1.0 - 1e-12);
    let thetas: Vec<f64> = state.graphs.iter().map(|g| g.theta).collect();
    let mut rejected = 0;
    let (v, ok) = update_truncated_scale(state.sigma2_theta, hp.mu_theta, &thetas, hp, rng)?;
    state.sigma2_theta = v;
    rejected += usize::from(!ok);
    let (v, ok) = update_truncated_scale(state.sigma2_lambda0, hp.mu_theta, &slabs, hp, rng)?;
    state.sigma2_lambda0 = v;
    rejected += usize::from(!ok);
    let (v, ok) = update_truncated_scale(state.sigma2_lambda1, 0.0, &spikes, hp, rng)?;
    state.sigma2_lambda1 = v;
    rejected += usize::from(!ok);
    Ok(rejected)
}

/// Step identifiers used to key random substreams within a sweep.
mod stream {
    pub const AUGMENT: u64 = 1;
    pub const DICTIONARY: u64 = 2;
    pub const ASSIGNMENT: u64 = 3;
    pub const WEIGHTS: u64 = 4;
    pub const SPECTRAL: u64 = 5;
    pub const DIAGONAL: u64 = 8;
    pub const NOISE: u64 = 9;
    pub const HYPER: u64 = 10;
    pub const RETRY: u64 = 11;
}

/// One full sweep. Per-graph and per-atom work runs in parallel on
/// substreams derived from a key drawn from `rng`, so the result depends
/// only on the inputs and the generator state.
pub fn sweep(state: &mut ChainState, data: &Dataset, hp: &HyperParams, rng: &mut ChainRng) -> Result<SweepReport> {
    sweep_with_prior(state, data, hp, None, rng)
}

/// As [`sweep`], with an optional Langevin prior term `MΩ` (n×T) on every atom.
pub fn sweep_with_prior(
    state: &mut ChainState,
    data: &Dataset,
    hp: &HyperParams,
    prior: Option<&DMatrix<f64>>,
    rng: &mut ChainRng,
) -> Result<SweepReport> {
    if data.is_empty() {
        return Err(Error::DimensionMismatch("sweep needs at least one graph".into()));
    }
    if state.graphs.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} graphs, data has {}",
            state.graphs.len(),
            data.len()
        )));
    }
    let key = rng.next_u64();
    let sub = |step: u64, idx: usize| ChainRng::derive(key, &[step, idx as u64]);
    let s_count = data.len();
    let mut report = SweepReport::default();

    // 1. Augmentation, with one θ refresh if a factorization fails.
    let clock = Instant::now();
    let outcomes: Vec<Result<(DMatrix<f64>, Option<f64>)>> = (0..s_count)
        .into_par_iter()
        .map(|s| {
            let mut r = sub(stream::AUGMENT, s);
            match augment_r(s, state, data, &mut r) {
                Ok(rs) => Ok((rs, None)),
                Err(Error::NotPositiveDefinite) => {
                    let mut retry = sub(stream::RETRY, s);
                    let theta = update_theta(s, state, data, hp, &mut retry);
                    let mut trial = state.clone();
                    trial.graphs[s].theta = theta;
                    augment_r(s, &trial, data, &mut retry).map(|rs| (rs, Some(theta)))
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut rs = Vec::with_capacity(s_count);
    for (s, out) in outcomes.into_iter().enumerate() {
        let (r, theta) = out.map_err(|e| e.at(SweepStep::AugmentR))?;
        if let Some(theta) = theta {
            state.graphs[s].theta = theta;
            report.theta_redraws += 1;
        }
        rs.push(r);
    }
    report.timings.augment = clock.elapsed().as_secs_f64();

    // 2. Dictionary atoms.
    let clock = Instant::now();
    let atoms: Vec<Result<(StiefelPoint, usize, bool)>> = (0..hp.g)
        .into_par_iter()
        .map(|l| update_dictionary_atom(l, state, &rs, hp, prior, &mut sub(stream::DICTIONARY, l)))
        .collect();
    for (l, a) in atoms.into_iter().enumerate() {
        let (atom, rejections, exhausted) = a.map_err(|e| e.at(SweepStep::Dictionary))?;
        state.dict.atoms[l] = atom;
        report.positivity_rejections += rejections;
        report.positivity_exhausted += usize::from(exhausted);
    }
    drop(rs);
    report.timings.dictionary = clock.elapsed().as_secs_f64();

    // 3. Assignments.
    let clock = Instant::now();
    let z: Vec<usize> = (0..s_count)
        .into_par_iter()
        .map(|s| update_assignment(s, state, data, hp, &mut sub(stream::ASSIGNMENT, s)))
        .collect();
    for (g, zs) in state.graphs.iter_mut().zip(z) {
        g.z = zs;
    }
    report.timings.assignment = clock.elapsed().as_secs_f64();

    // 4. Mixture weights.
    let clock = Instant::now();
    state.dict.pi = update_weights(state, hp, &mut sub(stream::WEIGHTS, 0)).map_err(|e| e.at(SweepStep::Weights))?;
    report.timings.weights = clock.elapsed().as_secs_f64();

    // 5-7. Spikes, indicators and the flat eigenvalue, graph by graph.
    let clock = Instant::now();
    let spectral: Vec<Result<(Vec<f64>, Vec<bool>, f64)>> = (0..s_count)
        .into_par_iter()
        .map(|s| {
            let mut r = sub(stream::SPECTRAL, s);
            let mut g = state.graphs[s].clone();
            let u = state.q(s);
            let l = data.working(s, &g.diag);
            for k in 1..hp.t {
                g.lambda[k] = sample_truncnorm(&lambda_conditional_parts(&g.eta, k, u, &l, state, hp), &mut r);
            }
            for k in 1..hp.t {
                let p = eta_probability(g.lambda[k], state, hp).map_err(|e| e.at(SweepStep::Eta))?;
                g.eta[k] = r.random::<f64>() < p;
            }
            let theta = sample_truncnorm(&theta_conditional_parts(u, &l, state, hp), &mut r);
            Ok((g.lambda, g.eta, theta))
        })
        .collect();
    for (s, out) in spectral.into_iter().enumerate() {
        let (lambda, eta, theta) = out?;
        let g = &mut state.graphs[s];
        g.lambda = lambda;
        g.eta = eta;
        g.theta = theta;
    }
    report.timings.spectral = clock.elapsed().as_secs_f64();

    // 8. Augmented diagonal.
    let clock = Instant::now();
    let diags: Vec<Vec<f64>> = (0..s_count)
        .into_par_iter()
        .map(|s| update_diag(s, state, &mut sub(stream::DIAGONAL, s)))
        .collect();
    for (g, d) in state.graphs.iter_mut().zip(diags) {
        g.diag = d;
    }
    report.timings.diagonal = clock.elapsed().as_secs_f64();

    // 9. Noise variance.
    let clock = Instant::now();
    state.sigma2_e =
        update_sigma2_e(state, data, hp, &mut sub(stream::NOISE, 0)).map_err(|e| e.at(SweepStep::NoiseVariance))?;
    report.timings.noise = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    if hp.update_hyperpriors {
        report.hyperprior_rejections =
            update_hyperpriors(state, hp, &mut sub(stream::HYPER, 0)).map_err(|e| e.at(SweepStep::Hyperpriors))?;
    }
    report.timings.hyperpriors = clock.elapsed().as_secs_f64();

    report.log_joint = log_joint(state, data, hp)?;
    Ok(report)
}

/// Log marginal likelihood of `Q` with `λ_2..λ_T` and `θ` integrated over
/// `(0, 2)` against Lebesgue measure, `λ_1 = 0` fixed, and every constant that
/// depends on `σ²_e` retained.
pub fn marginal_loglik_q(q: &DMatrix<f64>, l: &DMatrix<f64>, sigma2_e: f64) -> Result<f64> {
    let (n, t) = q.shape();
    if l.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected: (n, n),
            found: l.shape(),
        });
    }
    if t >= n {
        return Err(Error::TooManySpikes { spikes: t, n });
    }
    let s2 = sigma2_e;
    let lq = l * q;
    let quads: Vec<f64> = (0..t).map(|k| q.column(k).dot(&lq.column(k))).collect();
    let rest = l.trace() - quads.iter().sum::<f64>();
    let m = (n - t) as f64;
    let sd = (2.0 * s2).sqrt();
    let ln_4pi_s2 = (4.0 * std::f64::consts::PI * s2).ln();
    let mut out = -((n * (n + 1)) as f64) / 4.0 * s2.ln() - l.norm_squared() / (4.0 * s2);
    for &mk in &quads[1..] {
        out += mk * mk / (4.0 * s2) + 0.5 * ln_4pi_s2 + log_norm_cdf_diff(-mk / sd, (2.0 - mk) / sd);
    }
    let c = rest / m;
    let sd_theta = (2.0 * s2 / m).sqrt();
    out += rest * rest / (4.0 * s2 * m) + 0.5 * (ln_4pi_s2 - m.ln()) + log_norm_cdf_diff(-c / sd_theta, (2.0 - c) / sd_theta);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFiniteLogDensity)
    }
}

/// Convenience for tests and diagnostics: the column vector `u_k` of atom `l`.
pub fn atom_column(state: &ChainState, l: usize, k: usize) -> DVector<f64> {
    state.dict.atoms[l].matrix().column(k).clone_owned()
}
