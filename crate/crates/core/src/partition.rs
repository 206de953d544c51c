//! Sign-based κ-partitioning and posterior label uncertainty.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::PosteriorSamples;
use crate::error::{Error, Result};
use crate::graph::{cheeger_bound, normalized_cut_loss, recover_adjacency, spiked_mean, SpikedDecomposition};

/// Minimum number of stored draws for [`aggregate_uncertainty`].
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// Labels in `1..=kappa`.
    pub labels: Vec<usize>,
    pub kappa: usize,
    /// Normalized cut of the labels on the reconstructed adjacency; infinite
    /// when the cut denominator vanishes.
    pub cut_loss: f64,
    pub cheeger_ceiling: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SplitPolicy {
    /// Fail with `EmptySplit` when a round cannot split.
    #[default]
    Strict,
    /// Skip the round, emitting one block fewer.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelUncertainty {
    /// `prob[(i, l)]` is the posterior frequency of vertex `i` in reference block `l`.
    pub prob: DMatrix<f64>,
    pub kappa_histogram: BTreeMap<usize, f64>,
    pub reference: PartitionResult,
}

pub fn effective_kappa(eta: &[bool]) -> usize {
    assert!(eta.first() == Some(&true), "eta[0] must be fixed at one");
    eta.iter().filter(|&&e| e).count()
}

/// Sum over ordered pairs in `block` of the negative products `q_i q_j`.
fn block_loss(q: &[f64], block: &[usize]) -> f64 {
    let (mut pos, mut neg) = (0.0, 0.0);
    for &i in block {
        if q[i] > 0.0 {
            pos += q[i];
        } else {
            neg += q[i];
        }
    }
    2.0 * pos * neg
}

/// Sign-based partition by recursively splitting blocks on successive
/// eigenvectors in ascending eigenvalue order. Round `k` splits with the
/// `(k+1)`-th eigenvector, since the first is strictly positive.
pub fn sign_partition(d: &SpikedDecomposition, kappa: usize) -> Result<PartitionResult> {
    sign_partition_with(d, kappa, SplitPolicy::Strict)
}

pub fn sign_partition_with(d: &SpikedDecomposition, kappa: usize, policy: SplitPolicy) -> Result<PartitionResult> {
    let t = d.t();
    if kappa == 0 || kappa > t {
        return Err(Error::InvalidParam(format!("kappa must lie in 1..={t}, got {kappa}")));
    }
    let n = d.q.nrows();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| d.lambda[a].total_cmp(&d.lambda[b]));
    let mut blocks: Vec<Vec<usize>> = vec![(0..n).collect()];
    for round in 1..kappa {
        let col = order[round];
        let q: Vec<f64> = d.q.column(col).iter().copied().collect();
        let mut best = 0;
        let mut best_loss = f64::INFINITY;
        for (l, block) in blocks.iter().enumerate() {
            let loss = block_loss(&q, block);
            if loss < best_loss {
                best_loss = loss;
                best = l;
            }
        }
        let (keep, split): (Vec<usize>, Vec<usize>) = blocks[best].iter().partition(|&&i| q[i] >= 0.0);
        if keep.is_empty() || split.is_empty() {
            match policy {
                SplitPolicy::Strict => {
                    return Err(Error::EmptySplit {
                        block: best + 1,
                        eigenvector: round + 1,
                    })
                }
                SplitPolicy::Skip => continue,
            }
        }
        blocks[best] = keep;
        blocks.push(split);
    }
    let mut labels = vec![0; n];
    for (l, block) in blocks.iter().enumerate() {
        for &i in block {
            labels[i] = l + 1;
        }
    }
    let emitted = blocks.len();
    let mut sorted: Vec<f64> = d.lambda.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let (cut_loss, cheeger_ceiling) = if emitted >= 2 {
        let mean = spiked_mean(&d.q, d.lambda.as_slice(), d.theta);
        let q1 = d.q.column(0).clone_owned();
        let a = recover_adjacency(&mean, &q1)?;
        let zero_based: Vec<usize> = labels.iter().map(|l| l - 1).collect();
        let loss = match normalized_cut_loss(&a, &zero_based) {
            Ok(v) => v,
            Err(Error::DegenerateDenominator) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        (loss, cheeger_bound(emitted, &sorted))
    } else {
        (0.0, 0.0)
    };
    Ok(PartitionResult {
        labels,
        kappa: emitted,
        cut_loss,
        cheeger_ceiling,
    })
}

/// Confusion counts between two 1-based labelings.
fn confusion(a: &[usize], ka: usize, b: &[usize], kb: usize) -> Vec<Vec<i64>> {
    let mut m = vec![vec![0i64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        m[x - 1][y - 1] += 1;
    }
    m
}

/// Maps each label of `labels` to a reference label by maximum total overlap.
/// Labels left over when `labels` has more blocks than the reference go to
/// the reference block they overlap most.
pub fn align_labels(labels: &[usize], kappa: usize, reference: &[usize], kappa_ref: usize) -> Vec<usize> {
    let size = kappa.max(kappa_ref);
    let counts = confusion(labels, kappa, reference, kappa_ref);
    let mut weights = Matrix::new(size, size, 0i64);
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            weights[(i, j)] = c;
        }
    }
    let (_, assignment) = kuhn_munkres(&weights);
    let mapping: Vec<usize> = (0..kappa)
        .map(|i| {
            if assignment[i] < kappa_ref {
                assignment[i] + 1
            } else {
                let row = &counts[i];
                (0..kappa_ref).max_by_key(|&j| (row[j], std::cmp::Reverse(j))).unwrap() + 1
            }
        })
        .collect();
    labels.iter().map(|&l| mapping[l - 1]).collect()
}

/// Per-vertex posterior membership frequencies for graph `s`, with every
/// draw's sign partition aligned to the partition of the highest-log-joint
/// draw. Draws whose splits fail contribute with fewer blocks.
pub fn aggregate_uncertainty(samples: &PosteriorSamples, s: usize) -> Result<LabelUncertainty> {
    aggregate_uncertainty_with(samples, s, MIN_SAMPLES)
}

/// [`aggregate_uncertainty`] with a caller-chosen minimum draw count (at least one).
pub fn aggregate_uncertainty_with(samples: &PosteriorSamples, s: usize, min_samples: usize) -> Result<LabelUncertainty> {
    let draws = &samples.samples;
    let min_samples = min_samples.max(1);
    if draws.len() < min_samples {
        return Err(Error::InsufficientSamples {
            needed: min_samples,
            have: draws.len(),
        });
    }
    let parts: Vec<PartitionResult> = draws
        .par_iter()
        .map(|d| sign_partition_with(&d.decomposition(s), d.kappa(s), SplitPolicy::Skip))
        .collect::<Result<_>>()?;
    let best = (0..draws.len())
        .max_by(|&a, &b| draws[a].log_joint.total_cmp(&draws[b].log_joint).then(b.cmp(&a)))
        .unwrap();
    let reference = parts[best].clone();
    let n = reference.labels.len();
    let mut prob = DMatrix::zeros(n, reference.kappa);
    let mut hist = BTreeMap::new();
    for p in &parts {
        let aligned = align_labels(&p.labels, p.kappa, &reference.labels, reference.kappa);
        for (i, &l) in aligned.iter().enumerate() {
            prob[(i, l - 1)] += 1.0;
        }
        *hist.entry(p.kappa).or_insert(0.0) += 1.0;
    }
    let total = parts.len() as f64;
    hist.values_mut().for_each(|f| *f /= total);
    for mut row in prob.row_iter_mut() {
        let total: f64 = row.sum();
        row /= total;
    }
    Ok(LabelUncertainty {
        prob,
        kappa_histogram: hist,
        reference,
    })
}

impl PartitionResult {
    /// `vertex,label` rows with a header, vertices 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vertex,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }
}

impl LabelUncertainty {
    /// `vertex,label,p_1..p_κ` rows, labels from the reference partition.
    pub fn to_csv(&self) -> String {
        let k = self.prob.ncols();
        let mut out = String::from("vertex,label");
        for l in 1..=k {
            out.push_str(&format!(",p_{l}"));
        }
        out.push('\n');
        for i in 0..self.prob.nrows() {
            out.push_str(&format!("{},{}", i + 1, self.reference.labels[i]));
            for l in 0..k {
                out.push_str(&format!(",{}", self.prob[(i, l)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn kappa_csv(&self) -> String {
        let mut out = String::from("kappa,frequency\n");
        for (k, f) in &self.kappa_histogram {
            out.push_str(&format!("{k},{f}\n"));
        }
        out
    }
}

/// Posterior-mean projector of graph `s` onto the eigenvector positions
/// `start..start + dims` in ascending eigenvalue order of each draw.
pub fn posterior_projector(samples: &PosteriorSamples, s: usize, start: usize, dims: usize) -> Result<DMatrix<f64>> {
    let first = samples
        .samples
        .first()
        .ok_or(Error::InsufficientSamples { needed: 1, have: 0 })?;
    let t = first.graphs[s].lambda.len();
    if start + dims > t || dims == 0 {
        return Err(Error::InvalidParam(format!(
            "eigenvector positions {start}..{} exceed T = {t}",
            start + dims
        )));
    }
    let n = first.q(s).nrows();
    let mut proj = DMatrix::zeros(n, n);
    for d in &samples.samples {
        let q = d.q(s);
        let lambda = &d.graphs[s].lambda;
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| lambda[a].total_cmp(&lambda[b]));
        for &k in &order[start..start + dims] {
            let c = q.column(k);
            proj += &c * c.transpose();
        }
    }
    Ok(proj / samples.samples.len() as f64)
}

/// Clusters vertices into `k` groups by k-means on the leading `dims`
/// eigenvectors of the posterior-mean projector. Labels are 1-based.
pub fn projector_partition(samples: &PosteriorSamples, s: usize, start: usize, dims: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    let proj = posterior_projector(samples, s, start, dims)?;
    let (w, _) = crate::linalg::sorted_symmetric_eigen(&(-proj))?;
    Ok(crate::metrics::kmeans_labels(&w.columns(0, dims).clone_owned(), k, seed))
}
