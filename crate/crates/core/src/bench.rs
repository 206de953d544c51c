//! Desk-scale reproductions of the synthetic benchmarks.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{run_chain, ChainConfig, PosteriorSamples};
use crate::error::{Error, Result};
use crate::graph::{build_laplacian, full_eigendecomposition, WeightedGraph};
use crate::metrics::{baseline_spectral_sbm, kmeans_labels, nmi, rand_index, rmse, rmse_laplacian, spectral_spiked_fit};
use crate::model::{Dataset, HyperParams};
use crate::partition::projector_partition;
use crate::rng::ChainRng;
use crate::synth::{gen_planted_blocks, generate, Scenario, SynthSpec};

/// Observed-gap bins `[lo, hi)` for the noise-level benchmark with the
/// noise scale used to populate each.
pub const GAP_BINS: [(&str, f64, f64, f64); 5] = [
    ("gap>=0.5", 0.5, f64::INFINITY, 0.0),
    ("gap[0.2,0.5)", 0.2, 0.5, 0.15),
    ("gap[0.075,0.2)", 0.075, 0.2, 0.35),
    ("gap[0.03,0.075)", 0.03, 0.075, 0.55),
    ("gap<0.03", 0.0, 0.03, 0.9),
];

/// Attempts per replicate when searching for a graph inside a gap bin.
const BIN_ATTEMPTS: usize = 400;

/// Noise scale for the graph-size benchmark, chosen so the spectral
/// baseline sits near its published accuracy at n = 100.
pub const SIZE_BENCH_XI: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub replicates: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub t: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn desk(replicates: usize, seed: u64) -> Self {
        BenchConfig {
            replicates,
            iters: 3000,
            burnin: 1000,
            thin: 10,
            t: 6,
            seed,
        }
    }

    fn chain(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
            seed,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// `None` for a single replicate.
    pub sd: Option<f64>,
    pub replicates: usize,
}

impl BenchRow {
    pub fn from_values(method: &str, metric: &str, values: &[f64]) -> Self {
        let m = values.len();
        let mean = values.iter().sum::<f64>() / m as f64;
        let sd = (m > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt());
        BenchRow {
            method: method.into(),
            metric: metric.into(),
            mean,
            sd,
            replicates: m,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub const HEADER: &'static str = "method,metric,mean,sd,replicates";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let sd = r.sd.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", r.method, r.metric, r.mean, sd, r.replicates));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        if lines.next() != Some(Self::HEADER) {
            return Err(Error::Parse("unexpected bench table header".into()));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 5 {
                    return Err(Error::Parse(format!("bench row has {} fields", f.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
                Ok(BenchRow {
                    method: f[0].into(),
                    metric: f[1].into(),
                    mean: num(f[2])?,
                    sd: if f[3].is_empty() { None } else { Some(num(f[3])?) },
                    replicates: f[4].parse().map_err(|e: std::num::ParseIntError| Error::Parse(e.to_string()))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(BenchTable { rows })
    }

    pub fn get(&self, method: &str, metric: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }
}

pub const SPIKED: &str = "spiked-laplacian";
pub const OBSERVED: &str = "observed-laplacian";
pub const SPECTRAL_SBM: &str = "spectral-sbm";
pub const AVERAGE_SBM: &str = "average+sbm";

fn fit(l: Vec<crate::graph::NormalizedLaplacian>, t: usize, cfg: &BenchConfig, seed: u64) -> Result<PosteriorSamples> {
    let data = Dataset::new(l)?;
    run_chain(&data, &HyperParams::new(t), &cfg.chain(seed))
}

/// Labels from k-means on the 2nd and 3rd eigenvectors of the observed Laplacian.
pub fn observed_labels(l: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let (w, _) = full_eigendecomposition(l)?;
    Ok(kmeans_labels(&w.columns(1, k - 1).clone_owned(), k, seed))
}

/// One replicate of the noise-level benchmark: observed gap and the NMI of
/// both methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseReplicate {
    pub gap: f64,
    pub xi: f64,
    pub spiked_nmi: f64,
    pub observed_nmi: f64,
}

/// Draws a planted-block graph (10/20/30) whose observed gap `λ̂₄ − λ̂₃`
/// lies in `[lo, hi)`, searching seeds derived from `key`.
pub fn graph_in_gap_bin(lo: f64, hi: f64, xi: f64, key: &[u64]) -> Result<(crate::graph::NormalizedLaplacian, Vec<usize>, f64)> {
    for attempt in 0..BIN_ATTEMPTS {
        let mut path = key.to_vec();
        path.push(attempt as u64);
        let mut rng = ChainRng::derive(0x61A9, &path);
        let (g, labels) = gen_planted_blocks(&[10, 20, 30], xi, 1e-6, &mut rng)?;
        let l = build_laplacian(&g)?;
        let (_, omega) = full_eigendecomposition(&l.l)?;
        let gap = omega[3] - omega[2];
        if gap >= lo && gap < hi {
            return Ok((l, labels, gap));
        }
    }
    Err(Error::ConvergenceFailure)
}

pub fn noise_replicate(bin: usize, rep: usize, cfg: &BenchConfig) -> Result<NoiseReplicate> {
    let (_, lo, hi, xi) = GAP_BINS[bin];
    let (l, truth, gap) = graph_in_gap_bin(lo, hi, xi, &[cfg.seed, bin as u64, rep as u64])?;
    let seed = ChainRng::derive(cfg.seed, &[bin as u64, rep as u64]).next_seed();
    let observed = observed_labels(&l.l, 3, seed)?;
    let post = fit(vec![l], cfg.t, cfg, seed)?;
    let spiked = projector_partition(&post, 0, 1, 2, 3, seed)?;
    Ok(NoiseReplicate {
        gap,
        xi,
        spiked_nmi: nmi(&spiked, &truth)?,
        observed_nmi: nmi(&observed, &truth)?,
    })
}

/// Noise-level benchmark: two methods across five observed-gap bins.
pub fn table_noise_levels(cfg: &BenchConfig) -> Result<(BenchTable, Vec<Vec<NoiseReplicate>>)> {
    let reps: Vec<Vec<NoiseReplicate>> = (0..GAP_BINS.len())
        .map(|b| {
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| noise_replicate(b, r, cfg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut table = BenchTable::default();
    for (b, rs) in reps.iter().enumerate() {
        let name = format!("nmi[{}]", GAP_BINS[b].0);
        table.rows.push(BenchRow::from_values(SPIKED, &name, &rs.iter().map(|r| r.spiked_nmi).collect::<Vec<_>>()));
        table.rows.push(BenchRow::from_values(OBSERVED, &name, &rs.iter().map(|r| r.observed_nmi).collect::<Vec<_>>()));
    }
    Ok((table, reps))
}

/// Block sizes in ratio 1:2:3 summing to `n`.
pub fn ratio_blocks(n: usize) -> Vec<usize> {
    let a = (n as f64 / 6.0).round() as usize;
    let b = (n as f64 / 3.0).round() as usize;
    vec![a, b, n - a - b]
}

/// Graph-size benchmark at one `n`: spiked model vs spectral SBM.
pub fn table_graph_size(n: usize, cfg: &BenchConfig) -> Result<BenchTable> {
    let sizes = ratio_blocks(n);
    let out: Vec<(f64, f64)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChainRng::derive(cfg.seed, &[0x7A, n as u64, r as u64]);
            let (g, truth) = gen_planted_blocks(&sizes, SIZE_BENCH_XI, 1e-6, &mut rng)?;
            let l = build_laplacian(&g)?;
            let seed = rng.next_seed();
            let sbm = baseline_spectral_sbm(&l.l, 3, seed)?;
            let post = fit(vec![l], cfg.t, cfg, seed)?;
            let spiked = projector_partition(&post, 0, 0, 3, 3, seed)?;
            Ok((nmi(&spiked, &truth)?, nmi(&sbm, &truth)?))
        })
        .collect::<Result<_>>()?;
    let metric = format!("nmi[n={n}]");
    Ok(BenchTable {
        rows: vec![
            BenchRow::from_values(SPIKED, &metric, &out.iter().map(|o| o.0).collect::<Vec<_>>()),
            BenchRow::from_values(SPECTRAL_SBM, &metric, &out.iter().map(|o| o.1).collect::<Vec<_>>()),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n: usize,
    pub graphs: usize,
    pub communities: usize,
    pub patterns: usize,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            n: 100,
            graphs: 20,
            communities: 4,
            patterns: 3,
        }
    }
}

/// Heterogeneous-population benchmark: spiked model vs averaging followed by
/// spectral clustering, scored by per-graph NMI and Laplacian RMSE. The
/// pattern Rand index of the final assignments is reported for the model.
pub fn table_population(spec: &PopulationSpec, cfg: &BenchConfig) -> Result<BenchTable> {
    let c = spec.communities;
    let per_rep: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = ChainRng::derive(cfg.seed, &[0x3C, r as u64]).next_seed();
            let ds = generate(&SynthSpec {
                scenario: Scenario::HeteroPopulation {
                    n: spec.n,
                    graphs: spec.graphs,
                    communities: c,
                    patterns: spec.patterns,
                    noise_sd: 1.0,
                },
                seed,
            })?;
            let mut avg = DMatrix::zeros(spec.n, spec.n);
            for a in &ds.adjacency {
                avg += a;
            }
            avg /= ds.adjacency.len() as f64;
            let avg_l = build_laplacian(&WeightedGraph::new(avg)?)?;
            let base_labels = baseline_spectral_sbm(&avg_l.l, c, seed)?;
            let base_fit = spectral_spiked_fit(&avg_l.l, c)?;
            let post = fit(ds.laplacians.clone(), cfg.t, cfg, seed)?;
            let mut out = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for s in 0..spec.graphs {
                let truth = &ds.true_labels[s];
                let observed = &ds.laplacians[s].l;
                out.0.push(nmi(&projector_partition(&post, s, 0, c, c, seed)?, truth)?);
                out.1.push(nmi(&base_labels, truth)?);
                out.2.push(rmse_laplacian(&post, s, observed)?);
                out.3.push(rmse(&base_fit, observed));
            }
            let z: Vec<usize> = post.final_state.graphs.iter().map(|g| g.z).collect();
            let ri = rand_index(ds.true_pattern.as_ref().expect("population has patterns"), &z)?;
            Ok((out.0, out.1, out.2, out.3, ri))
        })
        .collect::<Result<_>>()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let pick = |f: fn(&(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)) -> &Vec<f64>| -> Vec<f64> {
        per_rep.iter().map(|r| mean(f(r))).collect()
    };
    Ok(BenchTable {
        rows: vec![
            BenchRow::from_values(SPIKED, "nmi", &pick(|r| &r.0)),
            BenchRow::from_values(AVERAGE_SBM, "nmi", &pick(|r| &r.1)),
            BenchRow::from_values(SPIKED, "rmse", &pick(|r| &r.2)),
            BenchRow::from_values(AVERAGE_SBM, "rmse", &pick(|r| &r.3)),
            BenchRow::from_values(SPIKED, "pattern_rand_index", &per_rep.iter().map(|r| r.4).collect::<Vec<_>>()),
        ],
    })
}

/// Posterior means of the sorted eigenvalues and of the matching indicators
/// for graph `s`; the k-th entry refers to the k-th smallest λ of each draw.
pub fn sorted_spectrum_summary(samples: &PosteriorSamples, s: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let t = samples.samples[0].graphs[s].lambda.len();
    let m = samples.samples.len() as f64;
    let mut lambda = vec![0.0; t];
    let mut eta = vec![0.0; t];
    let mut theta = 0.0;
    for d in &samples.samples {
        let g = &d.graphs[s];
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| g.lambda[a].total_cmp(&g.lambda[b]));
        for (pos, &k) in order.iter().enumerate() {
            lambda[pos] += g.lambda[k];
            eta[pos] += f64::from(u8::from(g.eta[k]));
        }
        theta += g.theta;
    }
    lambda.iter_mut().chain(eta.iter_mut()).for_each(|v| *v /= m);
    (lambda, eta, theta / m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumComparison {
    pub raw: Vec<f64>,
    pub spiked: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: f64,
}

/// Fits one graph with `t` spikes and compares the posterior spectrum with
/// the raw eigenvalues.
pub fn spectrum_comparison(l: &crate::graph::NormalizedLaplacian, t: usize, cfg: &BenchConfig, seed: u64) -> Result<SpectrumComparison> {
    let (_, omega) = full_eigendecomposition(&l.l)?;
    let post = fit(vec![l.clone()], t, cfg, seed)?;
    let (spiked, eta, theta) = sorted_spectrum_summary(&post, 0);
    Ok(SpectrumComparison {
        raw: omega.iter().copied().collect(),
        spiked,
        eta,
        theta,
    })
}

trait NextSeed {
    fn next_seed(&mut self) -> u64;
}

impl NextSeed for ChainRng {
    fn next_seed(&mut self) -> u64 {
        rand::RngCore::next_u64(self)
    }
}
