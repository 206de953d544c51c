//! Chain orchestration: burn-in, thinning, progress records and
//! checkpoint/resume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::{sweep, SweepReport};
use crate::graph::SpikedDecomposition;
use crate::model::{init_chain, ChainState, Dataset, GraphState, HyperParams};
use crate::rng::ChainRng;
use crate::stiefel::StiefelPoint;

pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Key reserved for the initialization stream; sweeps use their index.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub path: PathBuf,
    /// Write after every `every` completed sweeps.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub checkpoint: Option<CheckpointConfig>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iters: 30_000,
            burnin: 10_000,
            thin: 20,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidParam("thin must be at least 1".into()));
        }
        if self.burnin > self.iters {
            return Err(Error::InvalidParam(format!(
                "burnin {} exceeds iterations {}",
                self.burnin, self.iters
            )));
        }
        if let Some(c) = &self.checkpoint {
            if c.every == 0 {
                return Err(Error::InvalidParam("checkpoint interval must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn expected_samples(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }

    fn keeps(&self, sweep: usize) -> bool {
        sweep >= self.burnin && (sweep + 1 - self.burnin) % self.thin == 0
    }
}

/// Stored draw: per-graph parameters plus the atoms in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub sweep: usize,
    pub log_joint: f64,
    pub sigma2_e: f64,
    pub w: f64,
    pub graphs: Vec<GraphState>,
    pub atoms: BTreeMap<usize, StiefelPoint>,
}

impl PosteriorSample {
    pub fn from_state(sweep: usize, log_joint: f64, state: &ChainState) -> Self {
        let atoms = state
            .graphs
            .iter()
            .map(|g| (g.z, state.dict.atoms[g.z].clone()))
            .collect();
        PosteriorSample {
            sweep,
            log_joint,
            sigma2_e: state.sigma2_e,
            w: state.w,
            graphs: state.graphs.clone(),
            atoms,
        }
    }

    pub fn q(&self, s: usize) -> &nalgebra::DMatrix<f64> {
        self.atoms[&self.graphs[s].z].matrix()
    }

    pub fn decomposition(&self, s: usize) -> SpikedDecomposition {
        let g = &self.graphs[s];
        SpikedDecomposition {
            q: self.q(s).clone(),
            lambda: nalgebra::DVector::from_vec(g.lambda.clone()),
            theta: g.theta,
            eta: g.eta.clone(),
        }
    }

    /// Number of η = 1 entries of graph `s`.
    pub fn kappa(&self, s: usize) -> usize {
        self.graphs[s].kappa()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub samples: Vec<PosteriorSample>,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Log joint after every sweep, including burn-in.
    pub trace: Vec<f64>,
    /// State after the last sweep.
    pub final_state: ChainState,
}

/// One progress line: `sweep, log_joint, sigma2_e, occupied_atoms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub sweep: usize,
    pub log_joint: f64,
    pub sigma2_e: f64,
    pub occupied_atoms: usize,
}

impl ProgressRecord {
    pub const CSV_HEADER: &'static str = "sweep,log_joint,sigma2_e,occupied_atoms";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.sweep, self.log_joint, self.sigma2_e, self.occupied_atoms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointPayload {
    completed: usize,
    config: ChainConfig,
    hp: HyperParams,
    state: ChainState,
    samples: Vec<PosteriorSample>,
    trace: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    sha256: String,
    payload: serde_json::Value,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_checkpoint(path: &Path, payload: &CheckpointPayload) -> Result<()> {
    let tmp = path.with_extension("tmp");
    save_record(&tmp, payload)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<CheckpointPayload> {
    load_record(path)
}

pub fn run_chain(data: &Dataset, hp: &HyperParams, config: &ChainConfig) -> Result<PosteriorSamples> {
    run_chain_observed(data, hp, config, |_, _| {})
}

/// Runs a chain from a fresh initialization, calling `observe` after every sweep.
pub fn run_chain_observed<F>(data: &Dataset, hp: &HyperParams, config: &ChainConfig, observe: F) -> Result<PosteriorSamples>
where
    F: FnMut(&ProgressRecord, &SweepReport),
{
    config.validate()?;
    hp.validate()?;
    let state = init_chain(data, hp, &mut ChainRng::derive(config.seed, &[INIT_STREAM]))?;
    let payload = CheckpointPayload {
        completed: 0,
        config: config.clone(),
        hp: hp.clone(),
        state,
        samples: Vec::new(),
        trace: Vec::new(),
    };
    drive(data, payload, observe)
}

/// Runs a chain from a given initial state.
pub fn run_chain_from<F>(
    data: &Dataset,
    hp: &HyperParams,
    config: &ChainConfig,
    state: ChainState,
    observe: F,
) -> Result<PosteriorSamples>
where
    F: FnMut(&ProgressRecord, &SweepReport),
{
    config.validate()?;
    hp.validate()?;
    state.validate(data.n(), hp)?;
    let payload = CheckpointPayload {
        completed: 0,
        config: config.clone(),
        hp: hp.clone(),
        state,
        samples: Vec::new(),
        trace: Vec::new(),
    };
    drive(data, payload, observe)
}

/// Continues the chain stored in a checkpoint. Sweep `i` always draws from
/// the stream derived from `(seed, i)`, so a resumed run reproduces the
/// uninterrupted one exactly.
pub fn resume_chain<F>(data: &Dataset, checkpoint: &Path, observe: F) -> Result<PosteriorSamples>
where
    F: FnMut(&ProgressRecord, &SweepReport),
{
    let payload = read_checkpoint(checkpoint)?;
    payload.state.validate(data.n(), &payload.hp)?;
    if payload.state.graphs.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint holds {} graphs, data has {}",
            payload.state.graphs.len(),
            data.len()
        )));
    }
    drive(data, payload, observe)
}

/// Runs `sweeps` further sweeps of the chain in a checkpoint and rewrites it;
/// used to split a run into interrupted segments.
pub fn advance_checkpoint(data: &Dataset, checkpoint: &Path, sweeps: usize) -> Result<usize> {
    let mut payload = read_checkpoint(checkpoint)?;
    let stop = (payload.completed + sweeps).min(payload.config.iters);
    payload = step_until(data, payload, stop, &mut |_, _| {})?;
    write_checkpoint(checkpoint, &payload)?;
    Ok(payload.completed)
}

/// Initializes a chain and writes its checkpoint without sweeping.
pub fn start_checkpoint(data: &Dataset, hp: &HyperParams, config: &ChainConfig, path: &Path) -> Result<()> {
    config.validate()?;
    hp.validate()?;
    let state = init_chain(data, hp, &mut ChainRng::derive(config.seed, &[INIT_STREAM]))?;
    write_checkpoint(
        path,
        &CheckpointPayload {
            completed: 0,
            config: config.clone(),
            hp: hp.clone(),
            state,
            samples: Vec::new(),
            trace: Vec::new(),
        },
    )
}

fn step_until<F>(data: &Dataset, mut p: CheckpointPayload, stop: usize, observe: &mut F) -> Result<CheckpointPayload>
where
    F: FnMut(&ProgressRecord, &SweepReport),
{
    while p.completed < stop {
        let i = p.completed;
        let mut rng = ChainRng::derive(p.config.seed, &[i as u64]);
        let report = sweep(&mut p.state, data, &p.hp, &mut rng)?;
        p.trace.push(report.log_joint);
        if p.config.keeps(i) {
            p.samples.push(PosteriorSample::from_state(i, report.log_joint, &p.state));
        }
        p.completed += 1;
        let record = ProgressRecord {
            sweep: i,
            log_joint: report.log_joint,
            sigma2_e: p.state.sigma2_e,
            occupied_atoms: p.state.occupied_atoms(),
        };
        observe(&record, &report);
        if let Some(c) = &p.config.checkpoint {
            if p.completed % c.every == 0 || p.completed == p.config.iters {
                write_checkpoint(&c.path, &p)?;
            }
        }
    }
    Ok(p)
}

fn drive<F>(data: &Dataset, payload: CheckpointPayload, mut observe: F) -> Result<PosteriorSamples>
where
    F: FnMut(&ProgressRecord, &SweepReport),
{
    let stop = payload.config.iters;
    let p = step_until(data, payload, stop, &mut observe)?;
    Ok(PosteriorSamples {
        samples: p.samples,
        iters: p.config.iters,
        burnin: p.config.burnin,
        thin: p.config.thin,
        seed: p.config.seed,
        trace: p.trace,
        final_state: p.state,
    })
}

/// Writes any serializable value as a versioned, checksummed record.
pub fn save_record<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_value(value)?;
    let file = CheckpointFile {
        schema_version: CHECKPOINT_SCHEMA,
        sha256: hex_digest(&serde_json::to_vec(&body)?),
        payload: body,
    };
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

/// Reads a record written by [`save_record`], verifying schema and checksum.
pub fn load_record<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file: CheckpointFile = serde_json::from_slice(&fs::read(path)?)?;
    if file.schema_version != CHECKPOINT_SCHEMA {
        return Err(Error::SchemaVersion {
            expected: CHECKPOINT_SCHEMA,
            found: file.schema_version,
        });
    }
    if hex_digest(&serde_json::to_vec(&file.payload)?) != file.sha256 {
        return Err(Error::ChecksumMismatch);
    }
    Ok(serde_json::from_value(file.payload)?)
}

pub fn save_state(path: &Path, state: &ChainState) -> Result<()> {
    save_record(path, state)
}

pub fn load_state(path: &Path) -> Result<ChainState> {
    load_record(path)
}
