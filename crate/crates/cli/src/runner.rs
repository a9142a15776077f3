//! Sweep orchestration over a worker pool.
//!
//! Sweep points and trials run in parallel. Every random draw comes from a
//! stream keyed by `(seed, point, trial)`, and results are collected in index
//! order, so the output never depends on the worker count.

use rayon::prelude::*;
use replica_core::amp::{amp_trial, summarize, AmpConfig};
use replica_core::replica_solver::{fixed_point_residual, free_energy, ModelSpec, RESIDUAL_TOL};
use replica_core::simulator::{instance_free_energy, measurement_count, mean_and_stderr, mh_posterior_chain, sample_instance};
use serde::Serialize;

use crate::config::{ExperimentConfig, MhSettings, Task};

/// One line of the result table. Absent values serialize as empty CSV fields.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ResultRow {
    pub beta: f64,
    /// Measurement count used by the simulations, `round(n/β)`.
    pub m: Option<usize>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
    pub free_energy: Option<f64>,
    pub mutual_info: Option<f64>,
    pub mmse: Option<f64>,
    pub sim_free_energy: Option<f64>,
    pub sim_free_energy_stderr: Option<f64>,
    pub mh_mse: Option<f64>,
    pub mh_mse_stderr: Option<f64>,
    pub amp_mse: Option<f64>,
    pub amp_mse_stderr: Option<f64>,
    /// `task: message` for every task that failed at this load, `; `-separated.
    pub error: Option<String>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sweep point `point`, so different loads use independent instances.
pub fn point_seed(seed: u64, point: usize) -> u64 {
    splitmix(seed ^ splitmix(point as u64))
}

/// Separate seed for Markov-chain moves, so chains never reuse instance draws.
pub fn chain_seed(seed: u64) -> u64 {
    splitmix(seed ^ 0x6D68_6368_6169_6E00)
}

/// Empirical free energy over `trials` instances, computed in parallel.
pub fn parallel_free_energy(model: &ModelSpec, n: usize, beta: f64, trials: usize, seed: u64) -> replica_core::Result<(f64, f64)> {
    let values = (0..trials as u64)
        .into_par_iter()
        .map(|i| instance_free_energy(model, n, beta, seed, i))
        .collect::<replica_core::Result<Vec<_>>>()?;
    Ok(mean_and_stderr(&values))
}

/// Posterior-mean MSE from Metropolis–Hastings over `trials` instances.
pub fn parallel_mh_mse(model: &ModelSpec, n: usize, beta: f64, trials: usize, seed: u64, mh: MhSettings) -> replica_core::Result<(f64, f64)> {
    let values = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let inst = sample_instance(model, n, beta, seed, i)?;
            Ok(mh_posterior_chain(&inst, model, mh.steps, mh.burn_in, chain_seed(seed))?.mse)
        })
        .collect::<replica_core::Result<Vec<_>>>()?;
    Ok(mean_and_stderr(&values))
}

/// Final AMP MSE over `config.trials` trials, with the replica reference.
pub fn parallel_amp(config: &AmpConfig) -> replica_core::Result<replica_core::amp::AmpExperiment> {
    config.validate()?;
    let finals = (0..config.trials as u64)
        .into_par_iter()
        .map(|i| amp_trial(config, i).map(|r| *r.mse_trace.last().expect("at least one iteration")))
        .collect::<replica_core::Result<Vec<_>>>()?;
    summarize(config, finals)
}

fn run_point(cfg: &ExperimentConfig, point: usize, beta: f64) -> ResultRow {
    let seed = point_seed(cfg.seed, point);
    let mut row = ResultRow { beta, ..Default::default() };
    let mut errors = Vec::new();
    if cfg.tasks.iter().any(|t| *t != Task::Replica) {
        row.m = Some(measurement_count(cfg.n, beta));
    }
    let model = &cfg.model;
    let replica = cfg.has(Task::Replica).then(|| free_energy(model, beta));
    let exact = cfg.has(Task::ExactSim).then(|| parallel_free_energy(model, cfg.n, beta, cfg.trials, seed));
    let mh = cfg.has(Task::Mh).then(|| parallel_mh_mse(model, cfg.n, beta, cfg.trials, seed, cfg.mh));
    let amp = cfg.has(Task::Amp).then(|| {
        let sp = cfg.sparse.expect("validated: amp needs a sparse prior");
        let mut ac = AmpConfig::new(sp.kappa, sp.gamma, cfg.n, beta, cfg.trials, seed);
        ac.iterations = cfg.iterations;
        ac.scaling = cfg.amp_scaling;
        parallel_amp(&ac)
    });
    match replica {
        Some(Ok(s)) => {
            row.eta = Some(s.eta);
            row.xi = Some(s.xi);
            row.free_energy = Some(s.free_energy);
            row.mutual_info = s.mutual_info;
            row.mmse = Some(s.mmse);
        }
        Some(Err(e)) => errors.push(format!("replica: {e}")),
        None => {}
    }
    match exact {
        Some(Ok((f, se))) => {
            row.sim_free_energy = Some(f);
            row.sim_free_energy_stderr = Some(se);
        }
        Some(Err(e)) => errors.push(format!("exact_sim: {e}")),
        None => {}
    }
    match mh {
        Some(Ok((f, se))) => {
            row.mh_mse = Some(f);
            row.mh_mse_stderr = Some(se);
        }
        Some(Err(e)) => errors.push(format!("mh: {e}")),
        None => {}
    }
    match amp {
        Some(Ok(a)) => {
            row.amp_mse = Some(a.mean_mse);
            row.amp_mse_stderr = Some(a.std_err);
        }
        Some(Err(e)) => errors.push(format!("amp: {e}")),
        None => {}
    }
    if !errors.is_empty() {
        row.error = Some(errors.join("; "));
    }
    row
}

/// One row per load, ascending. Task failures are recorded in the row's
/// `error` column and do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Vec<ResultRow> {
    pool.install(|| cfg.betas.par_iter().enumerate().map(|(k, &beta)| run_point(cfg, k, beta)).collect())
}

/// Re-evaluates the fixed-point equations at every reported `(η, ξ)`.
/// Returns `(β, residual)` for the rows that fail the check.
pub fn verify_rows(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .filter_map(|r| {
            let (eta, xi) = r.eta.zip(r.xi)?;
            let res = fixed_point_residual(&cfg.model, eta, xi, r.beta).unwrap_or(f64::INFINITY);
            (!(res < RESIDUAL_TOL)).then_some((r.beta, res))
        })
        .collect()
}
