mod common;

use common::*;
use spiked_laplacian::chain::*;
use spiked_laplacian::model::{Dataset, HyperParams, InitStrategy};
use spiked_laplacian::synth::{generate, Scenario, SynthSpec};
use spiked_laplacian::{ChainRng, Error};

fn small_data(seed: u64) -> Dataset {
    let mut rng = ChainRng::seed_from_u64(seed);
    Dataset::new((0..3).map(|_| random_laplacian(8, &mut rng)).collect()).unwrap()
}

fn config(iters: usize, burnin: usize, thin: usize) -> ChainConfig {
    ChainConfig {
        iters,
        burnin,
        thin,
        seed: 5,
        checkpoint: None,
    }
}

#[test]
fn burnin_equal_to_iters_keeps_nothing() {
    let data = small_data(1);
    let post = run_chain(&data, &HyperParams::new(3), &config(20, 20, 1)).unwrap();
    assert!(post.samples.is_empty());
    assert_eq!(post.trace.len(), 20);
}

#[test]
fn thinning_keeps_expected_sweeps() {
    let data = small_data(2);
    let cfg = config(50, 10, 4);
    let post = run_chain(&data, &HyperParams::new(3), &cfg).unwrap();
    assert_eq!(post.samples.len(), cfg.expected_samples());
    let sweeps: Vec<usize> = post.samples.iter().map(|s| s.sweep).collect();
    assert_eq!(sweeps, vec![13, 17, 21, 25, 29, 33, 37, 41, 45, 49]);
    for s in &post.samples {
        assert_eq!(s.log_joint, post.trace[s.sweep]);
    }
}

#[test]
fn config_validation() {
    assert!(matches!(config(10, 11, 1).validate(), Err(Error::InvalidParam(_))));
    assert!(config(10, 5, 0).validate().is_err());
    assert!(config(10, 5, 1).validate().is_ok());
    let d = ChainConfig::default();
    assert_eq!((d.iters, d.burnin, d.thin), (30_000, 10_000, 20));
}

#[test]
fn same_seed_same_chain() {
    let data = small_data(3);
    let hp = HyperParams::new(3);
    let a = run_chain(&data, &hp, &config(30, 10, 2)).unwrap();
    let b = run_chain(&data, &hp, &config(30, 10, 2)).unwrap();
    assert_eq!(a, b);
    let mut other = config(30, 10, 2);
    other.seed = 6;
    assert_ne!(a.trace, run_chain(&data, &hp, &other).unwrap().trace);
}

#[test]
fn interrupted_run_resumes_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let data = small_data(4);
    let hp = HyperParams::new(3);
    let cfg = config(40, 10, 3);
    let full = run_chain(&data, &hp, &cfg).unwrap();
    start_checkpoint(&data, &hp, &cfg, &path).unwrap();
    assert_eq!(advance_checkpoint(&data, &path, 7).unwrap(), 7);
    assert_eq!(advance_checkpoint(&data, &path, 11).unwrap(), 18);
    let resumed = resume_chain(&data, &path, |_, _| {}).unwrap();
    assert_eq!(resumed, full);
}

#[test]
fn periodic_checkpoints_are_written_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let data = small_data(5);
    let hp = HyperParams::new(3);
    let mut cfg = config(25, 5, 2);
    cfg.checkpoint = Some(CheckpointConfig { path: path.clone(), every: 10 });
    let full = run_chain(&data, &hp, &cfg).unwrap();
    assert!(path.is_file());
    // The last checkpoint holds the finished chain; resuming is a no-op.
    let again = resume_chain(&data, &path, |_, _| {}).unwrap();
    assert_eq!(again, full);
}

#[test]
fn corrupted_checkpoint_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let data = small_data(6);
    let hp = HyperParams::new(3);
    start_checkpoint(&data, &hp, &config(10, 2, 1), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["payload"]["completed"] = serde_json::json!(3);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(matches!(resume_chain(&data, &path, |_, _| {}), Err(Error::ChecksumMismatch)));

    v["payload"]["completed"] = serde_json::json!(0);
    v["schema_version"] = serde_json::json!(99);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(matches!(
        resume_chain(&data, &path, |_, _| {}),
        Err(Error::SchemaVersion { expected: 1, found: 99 })
    ));
}

#[test]
fn checkpoint_for_other_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let data = small_data(7);
    start_checkpoint(&data, &HyperParams::new(3), &config(10, 2, 1), &path).unwrap();
    let mut rng = ChainRng::seed_from_u64(1);
    let other = Dataset::new(vec![random_laplacian(8, &mut rng)]).unwrap();
    assert!(matches!(resume_chain(&other, &path, |_, _| {}), Err(Error::DimensionMismatch(_))));
}

#[test]
fn state_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let f = fixture(6, 2, 3, 2, 8);
    save_state(&path, &f.state).unwrap();
    assert_eq!(load_state(&path).unwrap(), f.state);
}

#[test]
fn progress_records_every_sweep() {
    let data = small_data(9);
    let mut seen = Vec::new();
    let post = run_chain_observed(&data, &HyperParams::new(3), &config(15, 5, 1), |r, rep| {
        assert_eq!(r.log_joint, rep.log_joint);
        seen.push(r.csv_line());
    })
    .unwrap();
    assert_eq!(seen.len(), 15);
    assert_eq!(ProgressRecord::CSV_HEADER.split(',').count(), seen[0].split(',').count());
    assert_eq!(post.trace.len(), 15);
}

/// From a dispersed start the log joint trends upward over 200 sweeps. The
/// Dirichlet density of unoccupied atoms' weights is left out of the monitored
/// value: those weights are near zero and their log density swings by
/// hundreds per sweep without bearing on the fit.
#[test]
fn dispersed_start_climbs_log_joint() {
    use spiked_laplacian::gibbs::sweep;
    use spiked_laplacian::model::init_chain;
    let ds = generate(&SynthSpec {
        scenario: Scenario::by_name("planted-blocks").unwrap(),
        seed: 0,
    })
    .unwrap();
    let data = Dataset::new(ds.laplacians).unwrap();
    let mut hp = HyperParams::new(6);
    hp.init = InitStrategy::Dispersed;
    let mut rng = ChainRng::seed_from_u64(0);
    let mut st = init_chain(&data, &hp, &mut rng).unwrap();
    let a = hp.alpha0 / hp.g as f64;
    let (mut trace, mut sigma) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        let lj = sweep(&mut st, &data, &hp, &mut rng).unwrap().log_joint;
        let occ = st.occupancy();
        let empty: f64 = st.dict.pi.iter().zip(&occ).filter(|(_, &c)| c == 0).map(|(p, _)| (a - 1.0) * p.ln()).sum();
        trace.push(lj - empty);
        sigma.push(st.sigma2_e);
    }
    // One-sided p < 0.01.
    let (_, z) = mann_kendall(&trace);
    assert!(z > 2.326, "log joint trend score {z}");
    let (_, z) = mann_kendall(&sigma);
    assert!(z < -2.326, "noise variance trend score {z}");
}

#[test]
fn planted_noise_variance_is_recovered() {
    let ds = generate(&SynthSpec {
        scenario: Scenario::PriorDraw {
            n: 60,
            graphs: 1,
            t: 4,
            atoms: 1,
            sigma2_e: 1e-2,
        },
        seed: 3,
    })
    .unwrap();
    let data = Dataset::new(ds.laplacians).unwrap();
    let post = run_chain(&data, &HyperParams::new(4), &config(5000, 1000, 10)).unwrap();
    let mean = post.samples.iter().map(|s| s.sigma2_e).sum::<f64>() / post.samples.len() as f64;
    assert!((mean / 1e-2 - 1.0).abs() < 0.2, "posterior mean {mean}");
}
