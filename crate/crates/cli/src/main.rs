//! `spiked`: fit, partition, simulate, benchmark and diagnose.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "spiked", version, about = "Spiked graph Laplacian community detection")]
struct Cli {
    /// JSON file whose fields override the command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model to a directory of graphs.
    Fit(RunArgs),
    /// Partition vertices from a fit.
    Partition(RunArgs),
    /// Write a synthetic dataset.
    Synth(RunArgs),
    /// Run a desk-scale benchmark.
    Bench(RunArgs),
    /// Compare raw and posterior spectra of a fit.
    Diagnose(RunArgs),
}

#[derive(Args, Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Number of spikes.
    #[arg(long = "T", default_value_t = 6)]
    #[serde(rename = "T")]
    pub t: usize,
    /// Truncation level of the dictionary.
    #[arg(long, default_value_t = 30)]
    pub g: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 30_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 20)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Vertices for scenarios that take a size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Checkpoint interval in sweeps; 0 disables checkpoints.
    #[arg(long, default_value_t = 1000)]
    pub checkpoint_every: usize,
}

impl Default for RunArgs {
    fn default() -> Self {
        RunArgs {
            input: None,
            output: None,
            t: 6,
            g: 30,
            alpha0: 0.1,
            iters: 30_000,
            burnin: 10_000,
            thin: 20,
            seed: 0,
            chains: 1,
            scenario: None,
            replicates: 10,
            n: None,
            checkpoint_every: 1000,
        }
    }
}

fn with_config(args: RunArgs, config: Option<&PathBuf>) -> Result<RunArgs, exit::Failure> {
    let Some(path) = config else { return Ok(args) };
    let text = std::fs::read_to_string(path).map_err(|e| exit::Failure::usage("ConfigUnreadable", e.to_string()))?;
    let overrides: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| exit::Failure::usage("InvalidConfig", e.to_string()))?;
    let mut merged = serde_json::to_value(SerArgs(&args)).expect("arguments serialize");
    for (k, v) in overrides {
        merged[k] = v;
    }
    serde_json::from_value(merged).map_err(|e| exit::Failure::usage("InvalidConfig", e.to_string()))
}

/// Serializes `RunArgs` with the same field names the config file uses.
struct SerArgs<'a>(&'a RunArgs);

impl serde::Serialize for SerArgs<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let a = self.0;
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("input", &a.input)?;
        m.serialize_entry("output", &a.output)?;
        m.serialize_entry("T", &a.t)?;
        m.serialize_entry("g", &a.g)?;
        m.serialize_entry("alpha0", &a.alpha0)?;
        m.serialize_entry("iters", &a.iters)?;
        m.serialize_entry("burnin", &a.burnin)?;
        m.serialize_entry("thin", &a.thin)?;
        m.serialize_entry("seed", &a.seed)?;
        m.serialize_entry("chains", &a.chains)?;
        m.serialize_entry("scenario", &a.scenario)?;
        m.serialize_entry("replicates", &a.replicates)?;
        m.serialize_entry("n", &a.n)?;
        m.serialize_entry("checkpoint_every", &a.checkpoint_every)?;
        m.end()
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("SPIKED_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let (args, run): (RunArgs, fn(&RunArgs) -> Result<(), exit::Failure>) = match cli.command {
        Command::Fit(a) => (a, commands::fit),
        Command::Partition(a) => (a, commands::partition),
        Command::Synth(a) => (a, commands::synth),
        Command::Bench(a) => (a, commands::bench),
        Command::Diagnose(a) => (a, commands::diagnose),
    };
    let outcome = with_config(args, cli.config.as_ref()).and_then(|a| run(&a));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.name, f.message);
            ExitCode::from(f.code)
        }
    }
}
