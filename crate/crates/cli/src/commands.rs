//! The four subcommands. Each returns the paths it wrote.
//!
//! Sweep points run in parallel; every emitted value depends only on the
//! config and the master seed. Replicate `r` draws its reservoir and data
//! from `derive_seed(master, "replicate", r)`, shared by all sweep points so
//! that points are compared on the same draw.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nisqrc::experiment::{reservoir_spectrum, run_ce, CeOutcome, CeSettings, ReservoirSpec, Topology};
use nisqrc::learn::ReadoutModel;
use nisqrc::qvt::{jacobian_rank, no_reset_kernels, reset_kernels, spectral_analysis, SpectrumRecord, UExpansion};
use nisqrc::reservoir::Simulator;
use nisqrc::seed::{derive_seed, rng_for};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Coherence, ExperimentConfig, Extended};
use crate::CliError;

pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    derive_seed(master, "replicate", replicate as u64)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(nisqrc::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn topology_name(t: Topology) -> &'static str {
    match t {
        Topology::Connected => "connected",
        Topology::Split => "split",
        Topology::Chain => "chain",
    }
}

#[derive(Serialize)]
struct SpectrumPoint {
    axis: &'static str,
    replicate: usize,
    seed: u64,
    tau: f64,
    t1: Option<Extended>,
    spectrum: SpectrumRecord,
}

#[derive(Serialize)]
struct SpectrumFile {
    master_seed: u64,
    points: Vec<SpectrumPoint>,
}

/// Null-input spectra at the base point and along the `tau` and `T1` grids.
///
/// Writes `spectrum.json` and `nm_sweep.csv`
/// (`axis,replicate,seed,tau,t1,lambda2_abs,n_m,d_eff`).
pub fn spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let base = cfg.reservoir.spec()?;
    // `None` marks per-qubit lifetimes.
    let base_t1 = match cfg.reservoir.t1 {
        Coherence::Uniform(t) => Some(t),
        Coherence::PerQubit(_) => None,
    };
    let mut axes: Vec<(&'static str, ReservoirSpec, Option<Extended>)> = vec![("base", base.clone(), base_t1)];
    for &tau in &cfg.spectrum.tau_grid {
        let mut s = base.clone();
        s.tau = tau;
        axes.push(("tau", s, base_t1));
    }
    for &t1 in &cfg.spectrum.t1_grid {
        let mut s = base.clone();
        s.t1 = t1.0;
        s.coherence = None;
        axes.push(("t1", s, Some(t1)));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.replicates)
        .flat_map(|r| (0..axes.len()).map(move |a| (r, a)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(replicate, a)| {
            let (axis, spec, t1) = &axes[a];
            let seed = replicate_seed(cfg.seed, replicate);
            let s = reservoir_spectrum(&spec.build(seed)?)?;
            Ok(SpectrumPoint {
                axis,
                replicate,
                seed,
                tau: spec.tau,
                t1: *t1,
                spectrum: SpectrumRecord::from(&s),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut csv = String::from("axis,replicate,seed,tau,t1,lambda2_abs,n_m,d_eff\n");
    for p in &points {
        let t1 = p.t1.map_or("per-qubit".to_string(), |t| t.to_string());
        let n_m = p.spectrum.memory_time.map_or("inf".to_string(), |v| v.to_string());
        let d_eff = p.spectrum.d_eff.map_or(String::new(), |v| v.to_string());
        writeln!(
            csv,
            "{},{},{},{},{t1},{},{n_m},{d_eff}",
            p.axis, p.replicate, p.seed, p.tau, p.spectrum.lambda2_abs
        )
        .unwrap();
    }
    let file = SpectrumFile {
        master_seed: cfg.seed,
        points,
    };
    Ok(vec![write(out, "spectrum.json", &json(&file)?)?, write(out, "nm_sweep.csv", &csv)?])
}

/// Volterra kernels of orders 0 to 2 per feature.
///
/// Writes `kernels.csv` (`replicate,seed,order,n1,n2,j,h`); `n1`, `n2` are
/// empty where the order does not use them.
pub fn kernels(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let spec = cfg.reservoir.spec()?;
    let k = &cfg.kernels;
    let tables = (0..cfg.replicates)
        .into_par_iter()
        .map(|replicate| {
            let seed = replicate_seed(cfg.seed, replicate);
            let r = spec.build(seed)?;
            let h = if k.reset {
                let e = UExpansion::extract_auto(&r, k.tolerance)?;
                let s = spectral_analysis(&e.null_map()?)?;
                reset_kernels(&e, &s, k.n_max)?
            } else {
                no_reset_kernels(&r, k.k_max, k.n_max.unwrap_or(8))?.0
            };
            let mut buf = Vec::new();
            h.write_csv(&mut buf)?;
            let body = String::from_utf8(buf).expect("ascii csv");
            let mut rows = String::new();
            for line in body.lines().skip(1) {
                writeln!(rows, "{replicate},{seed},{line}").unwrap();
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut csv = String::from("replicate,seed,order,n1,n2,j,h\n");
    for t in tables {
        csv.push_str(&t);
    }
    Ok(vec![write(out, "kernels.csv", &csv)?])
}

#[derive(Debug, Clone, Copy)]
struct CePoint {
    topology: Topology,
    reset: bool,
    shots: Extended,
    test_length: usize,
    replicate: usize,
}

#[derive(Serialize)]
struct ModelRecord {
    topology: &'static str,
    reset: bool,
    shots: Extended,
    test_length: usize,
    replicate: usize,
    seed: u64,
    memory_time: Extended,
    washout: usize,
    nisqrc: ReadoutModel,
    logistic_u: ReadoutModel,
}

/// Channel equalization over the topology, reset, `S` and `N_ts` grids.
///
/// Writes `results.csv` (`variant,topology,reset,S,N_ts,replicate,seed,train_error,test_error`)
/// and `model.json` with the trained readouts of every point.
pub fn ce(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let base = cfg.reservoir.spec()?;
    let c = &cfg.ce;
    let topologies = if c.topologies.is_empty() {
        vec![base.topology]
    } else {
        c.topologies.clone()
    };
    let mut points = Vec::new();
    for &topology in &topologies {
        for &reset in &c.reset {
            for &shots in &c.shots {
                for &test_length in &c.test_lengths {
                    for replicate in 0..cfg.replicates {
                        points.push(CePoint {
                            topology,
                            reset,
                            shots,
                            test_length,
                            replicate,
                        });
                    }
                }
            }
        }
    }
    let outcomes = points
        .par_iter()
        .map(|p| {
            let mut spec = base.clone();
            spec.topology = p.topology;
            let settings = CeSettings {
                snr_db: c.snr_db,
                train_messages: c.train_messages,
                train_length: c.train_length,
                test_messages: c.test_messages,
                test_length: p.test_length,
                shots: (p.shots.0 != f64::INFINITY).then_some(p.shots.0 as u64),
                reset: p.reset,
                washout: c.washout,
                l2: c.l2,
                engine: cfg.engine.engine(),
            };
            Ok(run_ce(&spec, &settings, replicate_seed(cfg.seed, p.replicate))?)
        })
        .collect::<Result<Vec<CeOutcome>, CliError>>()?;

    let mut csv = String::from("variant,topology,reset,S,N_ts,replicate,seed,train_error,test_error\n");
    let mut models = Vec::with_capacity(points.len());
    for (p, o) in points.iter().zip(outcomes) {
        let seed = replicate_seed(cfg.seed, p.replicate);
        let key = format!(
            "{},{},{},{},{},{seed}",
            topology_name(p.topology),
            p.reset,
            p.shots,
            p.test_length,
            p.replicate
        );
        writeln!(csv, "nisqrc,{key},{},{}", o.nisqrc_train, o.nisqrc_test).unwrap();
        writeln!(
            csv,
            "logistic-u,{key},{},{}",
            o.logistic_model.diagnostics.train_error, o.logistic_u
        )
        .unwrap();
        writeln!(csv, "direct-inverse,{key},,{}", o.direct_inverse).unwrap();
        writeln!(csv, "rounding,{key},,{}", o.rounding).unwrap();
        models.push(ModelRecord {
            topology: topology_name(p.topology),
            reset: p.reset,
            shots: p.shots,
            test_length: p.test_length,
            replicate: p.replicate,
            seed,
            memory_time: Extended(o.memory_time),
            washout: o.washout,
            nisqrc: o.model,
            logistic_u: o.logistic_model,
        });
    }
    Ok(vec![write(out, "results.csv", &csv)?, write(out, "model.json", &json(&models)?)?])
}

#[derive(Serialize)]
struct RankAt {
    threshold: f64,
    rank: usize,
}

#[derive(Serialize)]
struct JacobianRecord {
    topology: &'static str,
    replicate: usize,
    seed: u64,
    rank: usize,
    threshold: f64,
    epsilon: f64,
    /// Rank over one decade of thresholds around the configured one.
    robustness: Vec<RankAt>,
    relative_singular_values: Vec<f64>,
}

/// Jacobian rank of the readout moments per topology.
///
/// Writes `jacobian.json` and `jacobian_sv.csv`
/// (`topology,replicate,seed,index,relative_singular_value`).
pub fn jacobian(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let base = cfg.reservoir.spec()?;
    let j = &cfg.jacobian;
    let opts = j.options();
    let topologies = if j.topologies.is_empty() {
        vec![base.topology]
    } else {
        j.topologies.clone()
    };
    let jobs: Vec<(Topology, usize)> = topologies
        .iter()
        .flat_map(|&t| (0..cfg.replicates).map(move |r| (t, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(topology, replicate)| {
            let seed = replicate_seed(cfg.seed, replicate);
            let mut spec = base.clone();
            spec.topology = topology;
            let sim = Simulator::new(spec.build(seed)?, cfg.engine.engine())?;
            let mut rng = rng_for(seed, "jacobian-inputs", 0);
            let inputs: Vec<f64> = (0..j.inputs)
                .map(|_| rng.random_range(-j.input_range..j.input_range))
                .collect();
            let rep = jacobian_rank(&sim, &inputs, &opts)?;
            let robustness = [1.0 / 10.0, 1.0 / 3.0, 1.0, 3.0, 10.0]
                .iter()
                .map(|f| RankAt {
                    threshold: opts.threshold * f,
                    rank: rep.rank_at(opts.threshold * f),
                })
                .collect();
            Ok(JacobianRecord {
                topology: topology_name(topology),
                replicate,
                seed,
                rank: rep.rank,
                threshold: rep.threshold,
                epsilon: rep.epsilon,
                robustness,
                relative_singular_values: rep.relative_singular_values,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut csv = String::from("topology,replicate,seed,index,relative_singular_value\n");
    for r in &records {
        for (i, v) in r.relative_singular_values.iter().enumerate() {
            writeln!(csv, "{},{},{},{i},{v}", r.topology, r.replicate, r.seed).unwrap();
        }
    }
    Ok(vec![write(out, "jacobian.json", &json(&records)?)?, write(out, "jacobian_sv.csv", &csv)?])
}
