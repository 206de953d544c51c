//! Subcommand bodies.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use spiked_laplacian::bench::{self, BenchConfig, BenchTable, PopulationSpec};
use spiked_laplacian::chain::{self, ChainConfig, CheckpointConfig, PosteriorSamples, ProgressRecord};
use spiked_laplacian::gibbs::marginal_loglik_q;
use spiked_laplacian::graph::{build_laplacian, full_eigendecomposition, NormalizedLaplacian, WeightedGraph};
use spiked_laplacian::io::{self, csv_table, schema_line};
use spiked_laplacian::model::{Dataset, HyperParams};
use spiked_laplacian::partition::{self, MIN_SAMPLES};
use spiked_laplacian::synth::{self, Scenario, SynthSpec};
use spiked_laplacian::ChainRng;

use crate::exit::Failure;
use crate::RunArgs;

pub const DATASET_FILE: &str = "dataset.json";
pub const RUN_FILE: &str = "run.json";

pub fn posterior_file(chain: usize) -> String {
    format!("posterior_chain{chain}.json")
}

fn checkpoint_file(chain: usize) -> String {
    format!("checkpoint_chain{chain}.json")
}

fn graph_dir(s: usize) -> String {
    format!("graph_{:03}", s + 1)
}

fn input_dir(args: &RunArgs) -> Result<&Path, Failure> {
    args.input
        .as_deref()
        .ok_or_else(|| Failure::usage("MissingInput", "--input is required"))
}

fn output_dir(args: &RunArgs) -> Result<&Path, Failure> {
    args.output
        .as_deref()
        .ok_or_else(|| Failure::usage("MissingOutput", "--output is required"))
}

/// Writes a CSV with the schema line in front.
fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), Failure> {
    fs::write(path, csv_table(header, rows)).map_err(|e| spiked_laplacian::Error::from(e).into())
}

fn io_err(e: std::io::Error) -> Failure {
    spiked_laplacian::Error::from(e).into()
}

fn load_graphs(dir: &Path) -> Result<Vec<NormalizedLaplacian>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::usage("NoGraphsFound", format!("{} is not a directory", dir.display())));
    }
    let files = io::graph_files(dir)?;
    if files.is_empty() {
        return Err(Failure::usage("NoGraphsFound", format!("no .csv or .edges files in {}", dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let a = io::read_adjacency(f)?;
            build_laplacian(&WeightedGraph::new(a)?)
        })
        .collect::<spiked_laplacian::Result<_>>()
        .map_err(Failure::from)
}

fn chain_seed(seed: u64, chain: usize) -> u64 {
    if chain == 0 {
        seed
    } else {
        rand::RngCore::next_u64(&mut ChainRng::derive(seed, &[chain as u64]))
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema_version: u32,
    command: &'a str,
    version: &'a str,
    n: usize,
    graphs: usize,
    chains: Vec<ChainSummary>,
    hyperparameters: &'a HyperParams,
}

#[derive(Serialize)]
struct ChainSummary {
    chain: usize,
    seed: u64,
    iters: usize,
    burnin: usize,
    thin: usize,
    samples: usize,
}

/// Per-position means and standard deviations of the sorted spectrum.
fn spectrum_moments(post: &PosteriorSamples, s: usize) -> (Vec<(f64, f64)>, Vec<f64>, (f64, f64)) {
    let t = post.samples[0].graphs[s].lambda.len();
    let m = post.samples.len() as f64;
    let (mut l1, mut l2, mut eta) = (vec![0.0; t], vec![0.0; t], vec![0.0; t]);
    let (mut th1, mut th2) = (0.0, 0.0);
    for d in &post.samples {
        let g = &d.graphs[s];
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| g.lambda[a].total_cmp(&g.lambda[b]));
        for (pos, &k) in order.iter().enumerate() {
            l1[pos] += g.lambda[k];
            l2[pos] += g.lambda[k] * g.lambda[k];
            eta[pos] += f64::from(u8::from(g.eta[k]));
        }
        th1 += g.theta;
        th2 += g.theta * g.theta;
    }
    let sd = |a: f64, b: f64| ((b / m - (a / m).powi(2)).max(0.0)).sqrt();
    let lambda = l1.iter().zip(&l2).map(|(&a, &b)| (a / m, sd(a, b))).collect();
    (lambda, eta.iter().map(|e| e / m).collect(), (th1 / m, sd(th1, th2)))
}

fn write_fit_summaries(out: &Path, posts: &[PosteriorSamples], graphs: usize) -> Result<(), Failure> {
    let (mut theta, mut lambda, mut eta, mut assign) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (c, post) in posts.iter().enumerate() {
        if post.samples.is_empty() {
            continue;
        }
        for s in 0..graphs {
            let (lam, et, (tm, tsd)) = spectrum_moments(post, s);
            theta.push(format!("{},{},{},{}", c + 1, s + 1, tm, tsd));
            for (k, ((m, sd), e)) in lam.iter().zip(&et).enumerate() {
                lambda.push(format!("{},{},{},{},{}", c + 1, s + 1, k + 1, m, sd));
                eta.push(format!("{},{},{},{}", c + 1, s + 1, k + 1, e));
            }
            let mut counts = std::collections::BTreeMap::new();
            for d in &post.samples {
                *counts.entry(d.graphs[s].z).or_insert(0usize) += 1;
            }
            let (&atom, &count) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap();
            assign.push(format!(
                "{},{},{},{}",
                c + 1,
                s + 1,
                atom + 1,
                count as f64 / post.samples.len() as f64
            ));
        }
    }
    write_csv(&out.join("theta.csv"), "chain,graph,mean,sd", theta)?;
    write_csv(&out.join("lambda.csv"), "chain,graph,position,mean,sd", lambda)?;
    write_csv(&out.join("eta.csv"), "chain,graph,position,mean", eta)?;
    write_csv(&out.join("assignments.csv"), "chain,graph,atom,frequency", assign)
}

pub fn fit(args: &RunArgs) -> Result<(), Failure> {
    let graphs = load_graphs(input_dir(args)?)?;
    let out = output_dir(args)?;
    if args.chains == 0 {
        return Err(spiked_laplacian::Error::InvalidParam("chains must be at least 1".into()).into());
    }
    fs::create_dir_all(out).map_err(io_err)?;
    let data = Dataset::new(graphs)?;
    let mut hp = HyperParams::new(args.t);
    hp.g = args.g;
    hp.alpha0 = args.alpha0;
    hp.validate()?;
    let configs: Vec<ChainConfig> = (0..args.chains)
        .map(|c| ChainConfig {
            iters: args.iters,
            burnin: args.burnin,
            thin: args.thin,
            seed: chain_seed(args.seed, c),
            checkpoint: (args.checkpoint_every > 0).then(|| CheckpointConfig {
                path: out.join(checkpoint_file(c + 1)),
                every: args.checkpoint_every,
            }),
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let runs: Vec<(PosteriorSamples, Vec<ProgressRecord>)> = configs
        .par_iter()
        .map(|cfg| {
            let mut trace = Vec::with_capacity(cfg.iters);
            let post = chain::run_chain_observed(&data, &hp, cfg, |r, _| trace.push(*r))?;
            Ok((post, trace))
        })
        .collect::<spiked_laplacian::Result<_>>()?;

    chain::save_record(&out.join(DATASET_FILE), &data)?;
    let mut trace_rows = Vec::new();
    for (c, (post, trace)) in runs.iter().enumerate() {
        chain::save_record(&out.join(posterior_file(c + 1)), post)?;
        trace_rows.extend(trace.iter().map(|r| format!("{},{}", c + 1, r.csv_line())));
    }
    write_csv(
        &out.join("sigma2e_trace.csv"),
        &format!("chain,{}", ProgressRecord::CSV_HEADER),
        trace_rows,
    )?;
    let posts: Vec<PosteriorSamples> = runs.into_iter().map(|r| r.0).collect();
    write_fit_summaries(out, &posts, data.len())?;
    let manifest = RunManifest {
        schema_version: io::CSV_SCHEMA,
        command: "fit",
        version: env!("CARGO_PKG_VERSION"),
        n: data.n(),
        graphs: data.len(),
        chains: configs
            .iter()
            .zip(&posts)
            .enumerate()
            .map(|(c, (cfg, p))| ChainSummary {
                chain: c + 1,
                seed: cfg.seed,
                iters: cfg.iters,
                burnin: cfg.burnin,
                thin: cfg.thin,
                samples: p.samples.len(),
            })
            .collect(),
        hyperparameters: &hp,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(spiked_laplacian::Error::from)?;
    fs::write(out.join(RUN_FILE), text).map_err(io_err)
}

/// Loads the dataset and the first chain of a fit directory.
fn load_fit(dir: &Path) -> Result<(Dataset, PosteriorSamples), Failure> {
    let data_path = dir.join(DATASET_FILE);
    let post_path = dir.join(posterior_file(1));
    for p in [&data_path, &post_path] {
        if !p.is_file() {
            return Err(Failure::missing(format!("{} not found", p.display())));
        }
    }
    let data: Dataset = chain::load_record(&data_path)?;
    let post: PosteriorSamples = chain::load_record(&post_path)?;
    if post.samples.is_empty() {
        return Err(spiked_laplacian::Error::InsufficientSamples { needed: 1, have: 0 }.into());
    }
    Ok((data, post))
}

pub fn partition(args: &RunArgs) -> Result<(), Failure> {
    let input = input_dir(args)?;
    let (data, post) = load_fit(input)?;
    let out: PathBuf = args.output.clone().unwrap_or_else(|| input.to_path_buf());
    if post.samples.len() < MIN_SAMPLES {
        eprintln!(
            "warning: {} stored draws (fewer than {MIN_SAMPLES}); uncertainty is coarse",
            post.samples.len()
        );
    }
    for s in 0..data.len() {
        let u = partition::aggregate_uncertainty_with(&post, s, 1)?;
        let dir = out.join(graph_dir(s));
        fs::create_dir_all(&dir).map_err(io_err)?;
        for (name, text) in [
            ("labels.csv", u.reference.to_csv()),
            ("uncertainty.csv", u.to_csv()),
            ("kappa_hist.csv", u.kappa_csv()),
        ] {
            fs::write(dir.join(name), format!("{}\n{}", schema_line(), text)).map_err(io_err)?;
        }
    }
    Ok(())
}

fn scenario(args: &RunArgs) -> Result<Scenario, Failure> {
    let name = args
        .scenario
        .as_deref()
        .ok_or_else(|| Failure::usage("MissingScenario", "--scenario is required"))?;
    let mut sc = Scenario::by_name(name).map_err(|e| Failure::usage("InvalidScenario", e.to_string()))?;
    if let Some(v) = args.n {
        match &mut sc {
            Scenario::PriorDraw { n, .. } | Scenario::LatentManifold { n } | Scenario::HeteroPopulation { n, .. } => *n = v,
            Scenario::PlantedBlocks { .. } | Scenario::OverspecT { .. } => {
                return Err(Failure::usage("InvalidParam", format!("--n does not apply to {name}")))
            }
        }
    }
    Ok(sc)
}

pub fn synth(args: &RunArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        scenario: scenario(args)?,
        seed: args.seed,
    };
    let out = output_dir(args)?;
    let ds = synth::generate(&spec)?;
    io::write_dataset(out, &ds)?;
    Ok(())
}

pub fn bench(args: &RunArgs) -> Result<(), Failure> {
    let out = output_dir(args)?;
    let cfg = BenchConfig {
        replicates: args.replicates,
        iters: args.iters,
        burnin: args.burnin,
        thin: args.thin,
        t: args.t,
        seed: args.seed,
    };
    let name = args
        .scenario
        .as_deref()
        .ok_or_else(|| Failure::usage("MissingScenario", "--scenario is required"))?;
    let table: BenchTable = match name {
        "noise-levels" => bench::table_noise_levels(&cfg)?.0,
        "graph-size" => bench::table_graph_size(args.n.unwrap_or(100), &cfg)?,
        "population" => {
            let mut spec = PopulationSpec::default();
            if let Some(n) = args.n {
                spec.n = n;
            }
            bench::table_population(&spec, &cfg)?
        }
        other => {
            return Err(Failure::usage(
                "InvalidScenario",
                format!("unknown bench scenario '{other}' (noise-levels, graph-size, population)"),
            ))
        }
    };
    fs::create_dir_all(out).map_err(io_err)?;
    fs::write(out.join("results.csv"), format!("{}\n{}", schema_line(), table.to_csv())).map_err(io_err)
}

pub fn diagnose(args: &RunArgs) -> Result<(), Failure> {
    let input = input_dir(args)?;
    let (data, post) = load_fit(input)?;
    let out: PathBuf = args.output.clone().unwrap_or_else(|| input.to_path_buf());
    fs::create_dir_all(&out).map_err(io_err)?;
    for s in 0..data.len() {
        let (_, omega) = full_eigendecomposition(data.observed(s))?;
        let (lambda, eta, theta) = bench::sorted_spectrum_summary(&post, s);
        let rows = omega.iter().enumerate().map(|(k, raw)| match lambda.get(k) {
            Some(l) => format!("{},{},{},{}", k + 1, raw, l, eta[k]),
            None => format!("{},{},{},", k + 1, raw, theta),
        });
        write_csv(&out.join(format!("spectrum_{}.csv", graph_dir(s))), "position,raw,spiked,eta", rows)?;
    }
    let best = post
        .samples
        .iter()
        .max_by(|a, b| a.log_joint.total_cmp(&b.log_joint).then(b.sweep.cmp(&a.sweep)))
        .unwrap();
    let mut rows = Vec::new();
    for (&l, atom) in &best.atoms {
        for s in 0..data.len() {
            let v = marginal_loglik_q(atom.matrix(), data.observed(s), best.sigma2_e)?;
            rows.push(format!("{},{},{}", l + 1, s + 1, v));
        }
    }
    write_csv(&out.join("marginal_loglik.csv"), "atom,graph,marginal_loglik", rows)
}
