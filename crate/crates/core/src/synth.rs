//! Synthetic graph generators with known ground truth.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_beta, sample_inverse_gamma, sample_truncnorm, TruncatedNormalParams};
use crate::error::{Error, Result};
use crate::graph::{build_laplacian, recover_adjacency, spiked_mean, NormalizedLaplacian, SpikedDecomposition, WeightedGraph};
use crate::partition::{sign_partition_with, SplitPolicy};
use crate::rng::ChainRng;
use crate::stiefel::sample_uniform_stiefel_star;

pub const MANIFEST_SCHEMA: u32 = 1;

/// Redraws allowed before a generator gives up on a valid graph.
const MAX_REDRAWS: usize = 100;

/// Geometry of the two-arc latent manifold.
pub const ARC_RADII: (f64, f64) = (1.0, 1.6);
pub const ARC_SPAN_DEG: f64 = 90.0;
pub const ARC_JITTER: f64 = 0.05;
/// Distance between the end of the first arc and the start of the second.
pub const ARC_GAP: f64 = 0.3;
pub const KERNEL_RATE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum Scenario {
    PriorDraw {
        n: usize,
        graphs: usize,
        t: usize,
        atoms: usize,
        sigma2_e: f64,
    },
    PlantedBlocks {
        block_sizes: Vec<usize>,
        xi: f64,
        floor: f64,
        graphs: usize,
    },
    LatentManifold {
        n: usize,
    },
    HeteroPopulation {
        n: usize,
        graphs: usize,
        communities: usize,
        patterns: usize,
        noise_sd: f64,
    },
    OverspecT {
        block_sizes: Vec<usize>,
        xi: f64,
        floor: f64,
    },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::PriorDraw { .. } => "prior-draw",
            Scenario::PlantedBlocks { .. } => "planted-blocks",
            Scenario::LatentManifold { .. } => "latent-manifold",
            Scenario::HeteroPopulation { .. } => "hetero-population",
            Scenario::OverspecT { .. } => "overspec-T",
        }
    }

    /// Default parameters for a scenario name.
    pub fn by_name(name: &str) -> Result<Scenario> {
        Ok(match name {
            "prior-draw" => Scenario::PriorDraw {
                n: 60,
                graphs: 4,
                t: 5,
                atoms: 2,
                sigma2_e: 1e-2,
            },
            "planted-blocks" => Scenario::PlantedBlocks {
                block_sizes: vec![10, 20, 30],
                xi: 0.1,
                floor: 1e-6,
                graphs: 1,
            },
            "latent-manifold" => Scenario::LatentManifold { n: 200 },
            "hetero-population" => Scenario::HeteroPopulation {
                n: 300,
                graphs: 20,
                communities: 6,
                patterns: 5,
                noise_sd: 1.0,
            },
            "overspec-T" => Scenario::OverspecT {
                block_sizes: vec![10, 20, 30],
                xi: 0.1,
                floor: 1e-6,
            },
            other => return Err(Error::InvalidParam(format!("unknown scenario '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scenario: Scenario,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: SynthSpec,
    pub n: usize,
    pub graphs: usize,
    pub true_labels: Vec<Vec<usize>>,
    pub true_pattern: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub adjacency: Vec<DMatrix<f64>>,
    pub laplacians: Vec<NormalizedLaplacian>,
    /// Per-graph labels, 1-based.
    pub true_labels: Vec<Vec<usize>>,
    pub true_pattern: Option<Vec<usize>>,
    /// Generating parameters when the data come from the model itself.
    pub truth: Option<Vec<SpikedDecomposition>>,
    /// Latent coordinates of the manifold scenario.
    pub positions: Option<Vec<[f64; 2]>>,
    pub manifest: Manifest,
}

fn block_labels(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(b, &m)| std::iter::repeat_n(b + 1, m)).collect()
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// One planted-block adjacency: Bernoulli(0.5) inside blocks, symmetric
/// N(0, ξ²) noise everywhere, negatives clamped to zero and `floor` added
/// across blocks.
pub fn planted_block_adjacency<R: Rng + ?Sized>(sizes: &[usize], xi: f64, floor: f64, rng: &mut R) -> DMatrix<f64> {
    let labels = block_labels(sizes);
    let n = labels.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let same = labels[i] == labels[j];
            let base = if same && rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let mut w = (base + xi * normal(rng)).max(0.0);
            if !same {
                w += floor;
            }
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    a
}

pub fn gen_planted_blocks(sizes: &[usize], xi: f64, floor: f64, rng: &mut ChainRng) -> Result<(WeightedGraph, Vec<usize>)> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidParam("block sizes must be positive".into()));
    }
    if xi == 0.0 && floor == 0.0 && sizes.len() > 1 {
        return Err(Error::DisconnectedAtZeroNoise);
    }
    for _ in 0..MAX_REDRAWS {
        let a = planted_block_adjacency(sizes, xi, floor, rng);
        if let Ok(g) = WeightedGraph::new(a) {
            return Ok((g, block_labels(sizes)));
        }
    }
    Err(Error::DisconnectedGraph)
}

/// Latent positions near two arcs bending in opposite directions, laid out
/// as an S: the end of the first arc faces the start of the second across a
/// gap of [`ARC_GAP`]. Vertices are ordered along the curve, the first half
/// on the first arc, so the junction sits at the centre of the adjacency.
/// Edge weights are `exp(−10‖y_i − y_j‖)`.
pub fn gen_latent_manifold(n: usize, rng: &mut ChainRng) -> Result<(WeightedGraph, Vec<usize>, Vec<[f64; 2]>)> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidParam(format!("latent manifold needs an even n >= 4, got {n}")));
    }
    let half = n / 2;
    let span = ARC_SPAN_DEG.to_radians();
    let (r1, r2) = ARC_RADII;
    // Arc 1 is centred at the origin and bulges upward, traversed clockwise.
    let end1 = PI / 2.0 - span / 2.0;
    let tip = [r1 * end1.cos(), r1 * end1.sin()];
    let heading = [end1.sin(), -end1.cos()];
    // Arc 2 bulges downward, traversed counter-clockwise from where the
    // tangent of arc 1 leads after the gap.
    let start2 = -PI / 2.0 - span / 2.0;
    let entry = [tip[0] + ARC_GAP * heading[0], tip[1] + ARC_GAP * heading[1]];
    let c2 = [entry[0] - r2 * start2.cos(), entry[1] - r2 * start2.sin()];
    let mut pos = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for arc in 0..2 {
        let mut offsets: Vec<f64> = (0..half).map(|_| span * rng.random::<f64>()).collect();
        offsets.sort_by(f64::total_cmp);
        for t in offsets {
            let (centre, radius, phi) = if arc == 0 {
                ([0.0, 0.0], r1, PI / 2.0 + span / 2.0 - t)
            } else {
                (c2, r2, start2 + t)
            };
            pos.push([
                centre[0] + radius * phi.cos() + ARC_JITTER * normal(rng),
                centre[1] + radius * phi.sin() + ARC_JITTER * normal(rng),
            ]);
            labels.push(arc + 1);
        }
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = ((pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2)).sqrt();
            let w = (-KERNEL_RATE * d).exp();
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    Ok((WeightedGraph::new(a)?, labels, pos))
}

/// Balanced community patterns: each a random permutation of equal-sized
/// blocks over `communities` labels.
pub fn community_patterns<R: Rng + ?Sized>(n: usize, communities: usize, patterns: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..patterns)
        .map(|_| {
            let mut labels: Vec<usize> = (0..n).map(|i| i * communities / n + 1).collect();
            labels.shuffle(rng);
            labels
        })
        .collect()
}

/// `A = W Λ̃ Wᵀ + E` for a membership pattern, with `Λ̃ ~ U(0.5, 1.5)` per
/// community and symmetric Gaussian noise; negatives clamped, diagonal zero.
pub fn hetero_adjacency<R: Rng + ?Sized>(labels: &[usize], communities: usize, noise_sd: f64, rng: &mut R) -> DMatrix<f64> {
    let weights: Vec<f64> = (0..communities).map(|_| 0.5 + rng.random::<f64>()).collect();
    let n = labels.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let signal = if labels[i] == labels[j] { weights[labels[i] - 1] } else { 0.0 };
            let w = (signal + noise_sd * normal(rng)).max(0.0);
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    a
}

/// Draws one spiked decomposition from the prior with fresh hyperparameters.
fn prior_spectrum<R: Rng + ?Sized>(t: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<bool>, f64)> {
    let w = sample_beta(1.0, 1.0, rng)?;
    let s_theta = sample_inverse_gamma(2.0, 0.1, rng)?;
    let s_slab = sample_inverse_gamma(2.0, 0.1, rng)?;
    let s_spike = sample_inverse_gamma(2.0, 0.1, rng)?;
    let theta = sample_truncnorm(&TruncatedNormalParams::on_unit_band(1.0, s_theta), rng);
    let mut lambda = vec![0.0; t];
    let mut eta = vec![true; t];
    for k in 1..t {
        eta[k] = rng.random::<f64>() < w;
        let p = if eta[k] {
            TruncatedNormalParams::on_unit_band(0.0, s_spike)
        } else {
            TruncatedNormalParams::on_unit_band(1.0, s_slab)
        };
        lambda[k] = sample_truncnorm(&p, rng);
    }
    Ok((lambda, eta, theta))
}

/// Forward simulation of the model: shared atoms from the uniform prior on
/// the positive Stiefel set, spectra from their priors, `L = μ_L + E` with
/// off-diagonal noise variance `σ²_e` and diagonal variance `2σ²_e`, and the
/// adjacency recovered from `L` and the first eigenvector.
pub fn gen_prior_draw(
    n: usize,
    graphs: usize,
    t: usize,
    atoms: usize,
    sigma2_e: f64,
    seed: u64,
) -> Result<(Vec<DMatrix<f64>>, Vec<NormalizedLaplacian>, Vec<Vec<usize>>, Vec<usize>, Vec<SpikedDecomposition>)> {
    if t >= n || t < 2 || atoms == 0 {
        return Err(Error::InvalidParam(format!("prior draw needs 2 <= T < n and atoms >= 1 (T={t}, n={n})")));
    }
    let mut rng = ChainRng::derive(seed, &[0xA7]);
    let dict: Vec<DMatrix<f64>> = (0..atoms)
        .map(|_| sample_uniform_stiefel_star(n, t, &mut rng).into_matrix())
        .collect();
    let mut out = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..graphs {
        let mut r = ChainRng::derive(seed, &[s as u64]);
        let z = r.random_range(0..atoms);
        let (lambda, eta, theta) = prior_spectrum(t, &mut r)?;
        let q = dict[z].clone();
        let mut l = spiked_mean(&q, &lambda, theta);
        let sd = sigma2_e.sqrt();
        if sd > 0.0 {
            for i in 0..n {
                l[(i, i)] += (2.0f64).sqrt() * sd * normal(&mut r);
                for j in (i + 1)..n {
                    let e = sd * normal(&mut r);
                    l[(i, j)] += e;
                    l[(j, i)] += e;
                }
            }
        }
        let q1: DVector<f64> = q.column(0).clone_owned();
        let a = recover_adjacency(&l, &q1)?;
        let d = SpikedDecomposition::new(q, DVector::from_vec(lambda), theta, eta)?;
        let kappa = d.eta.iter().filter(|&&e| e).count();
        let labels = sign_partition_with(&d, kappa, SplitPolicy::Skip)?.labels;
        out.0.push(a);
        out.1.push(NormalizedLaplacian {
            l,
            degree_sqrt: q1,
        });
        out.2.push(labels);
        out.3.push(z + 1);
        out.4.push(d);
    }
    Ok(out)
}

/// Generates the dataset described by `spec`; identical specs give
/// bit-identical output.
pub fn generate(spec: &SynthSpec) -> Result<LabeledDataset> {
    let seed = spec.seed;
    let graph_rng = |s: usize| ChainRng::derive(seed, &[s as u64]);
    let from_graphs = |gs: Vec<(WeightedGraph, Vec<usize>)>, pattern: Option<Vec<usize>>| -> Result<LabeledDataset> {
        let laplacians = gs.iter().map(|(g, _)| build_laplacian(g)).collect::<Result<Vec<_>>>()?;
        let true_labels: Vec<Vec<usize>> = gs.iter().map(|(_, l)| l.clone()).collect();
        let adjacency: Vec<DMatrix<f64>> = gs.into_iter().map(|(g, _)| g.into_adjacency()).collect();
        Ok(LabeledDataset {
            manifest: Manifest {
                schema_version: MANIFEST_SCHEMA,
                spec: spec.clone(),
                n: adjacency[0].nrows(),
                graphs: adjacency.len(),
                true_labels: true_labels.clone(),
                true_pattern: pattern.clone(),
            },
            adjacency,
            laplacians,
            true_labels,
            true_pattern: pattern,
            truth: None,
            positions: None,
        })
    };
    match &spec.scenario {
        Scenario::PlantedBlocks {
            block_sizes,
            xi,
            floor,
            graphs,
        } => {
            if *graphs == 0 {
                return Err(Error::InvalidParam("graphs must be at least 1".into()));
            }
            let gs = (0..*graphs)
                .into_par_iter()
                .map(|s| gen_planted_blocks(block_sizes, *xi, *floor, &mut graph_rng(s)))
                .collect::<Result<Vec<_>>>()?;
            from_graphs(gs, None)
        }
        Scenario::OverspecT { block_sizes, xi, floor } => {
            from_graphs(vec![gen_planted_blocks(block_sizes, *xi, *floor, &mut graph_rng(0))?], None)
        }
        Scenario::LatentManifold { n } => {
            let (g, labels, pos) = gen_latent_manifold(*n, &mut graph_rng(0))?;
            let mut ds = from_graphs(vec![(g, labels)], None)?;
            ds.positions = Some(pos);
            Ok(ds)
        }
        Scenario::HeteroPopulation {
            n,
            graphs,
            communities,
            patterns,
            noise_sd,
        } => {
            if *communities < 1 || *communities > *n || *patterns == 0 || *graphs == 0 {
                return Err(Error::InvalidParam("hetero population needs 1 <= communities <= n, patterns >= 1, graphs >= 1".into()));
            }
            let pats = community_patterns(*n, *communities, *patterns, &mut ChainRng::derive(seed, &[0xA7]));
            let gs = (0..*graphs)
                .into_par_iter()
                .map(|s| {
                    let mut r = graph_rng(s);
                    let p = r.random_range(0..*patterns);
                    for _ in 0..MAX_REDRAWS {
                        if let Ok(g) = WeightedGraph::new(hetero_adjacency(&pats[p], *communities, *noise_sd, &mut r)) {
                            return Ok(((g, pats[p].clone()), p + 1));
                        }
                    }
                    Err(Error::DisconnectedGraph)
                })
                .collect::<Result<Vec<_>>>()?;
            let (gs, pattern): (Vec<_>, Vec<_>) = gs.into_iter().unzip();
            from_graphs(gs, Some(pattern))
        }
        Scenario::PriorDraw {
            n,
            graphs,
            t,
            atoms,
            sigma2_e,
        } => {
            let (adjacency, laplacians, true_labels, pattern, truth) = gen_prior_draw(*n, *graphs, *t, *atoms, *sigma2_e, seed)?;
            Ok(LabeledDataset {
                manifest: Manifest {
                    schema_version: MANIFEST_SCHEMA,
                    spec: spec.clone(),
                    n: *n,
                    graphs: *graphs,
                    true_labels: true_labels.clone(),
                    true_pattern: Some(pattern.clone()),
                },
                adjacency,
                laplacians,
                true_labels,
                true_pattern: Some(pattern),
                truth: Some(truth),
                positions: None,
            })
        }
    }
}
