//! Turbo AMP for the sparse hidden-Markov prior with per-iteration MSE tracking.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::markov_core::HiddenMarkovPrior;
use crate::replica_solver::{replica_mmse, ModelSpec, Prior, SnrLaw};
use crate::simulator::{instance_rng, mean_and_stderr, measurement_count, sample_signal};

/// How the raw `N(0, 1)` matrix enters the two matrix products of an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmpScaling {
    /// `A/√n` in the θ update and bare `A` in the residual update.
    #[default]
    Verbatim,
    /// `A/√n` in both updates.
    SqrtN,
    /// `A/√m` in both updates, the normalization under which the data are generated.
    SqrtM,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpConfig {
    pub kappa: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub n: usize,
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
    pub scaling: AmpScaling,
}

impl AmpConfig {
    pub fn new(kappa: f64, gamma: f64, n: usize, beta: f64, trials: usize, seed: u64) -> Self {
        AmpConfig { kappa, gamma, iterations: 10, n, beta, trials, seed, scaling: AmpScaling::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Invalid(alloc::format!("activity rate {} outside (0, 1)", self.kappa)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Invalid(alloc::format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.iterations == 0 || self.n == 0 || self.trials == 0 {
            return Err(Error::Invalid("iterations, n and trials must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Invalid("load must be positive".into()));
        }
        Ok(())
    }
}

/// Iterate of the algorithm after `iteration` sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub mu: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub c: f64,
    pub z: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub f: f64,
    pub g: f64,
    pub f_prime: f64,
}

/// Shrinkage `F`, variance `G` and the derivative `F′` at `θ`.
pub fn threshold_funcs(theta: f64, c: f64, kappa: f64) -> Thresholds {
    let alpha = 1.0 / (c + 1.0);
    let beta_l = (1.0 - kappa) / kappa * (c + 1.0) / c;
    let zeta = 1.0 / (c * (c + 1.0));
    let b = beta_l * libm::exp(-zeta * theta * theta);
    let shrink = alpha / (1.0 + b);
    let f = shrink * theta;
    // (c/θ)·F equals c·α/(1+B) for every θ, including its limit at 0
    let g = b * f * f + c * shrink;
    let f_prime = shrink * (1.0 + 2.0 * zeta * theta * theta * b / (1.0 + b));
    Thresholds { f, g, f_prime }
}

/// Result of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpRun {
    pub state: AmpState,
    /// `‖x − μ‖²/n` after each iteration; empty without ground truth.
    pub mse_trace: Vec<f64>,
}

/// Runs `config.iterations` sweeps on raw `A` (`m × n`, entries `N(0, 1)`).
pub fn turbo_amp(y: &[f64], a: &DMatrix<f64>, config: &AmpConfig, truth: Option<&[f64]>) -> Result<AmpRun> {
    let (m, n) = a.shape();
    if y.len() != m || truth.is_some_and(|t| t.len() != n) {
        return Err(Error::Invalid("observation, matrix and truth dimensions disagree".into()));
    }
    if config.iterations == 0 {
        return Err(Error::Invalid("need at least one iteration".into()));
    }
    let (theta_scale, resid_scale) = match config.scaling {
        AmpScaling::Verbatim => (1.0 / libm::sqrt(n as f64), 1.0),
        AmpScaling::SqrtN => (1.0 / libm::sqrt(n as f64), 1.0 / libm::sqrt(n as f64)),
        AmpScaling::SqrtM => (1.0 / libm::sqrt(m as f64), 1.0 / libm::sqrt(m as f64)),
    };
    let beta = n as f64 / m as f64;
    let y = DVector::from_column_slice(y);
    let mut mu = DVector::zeros(n);
    let mut upsilon = DVector::zeros(n);
    let mut z = y.clone();
    let mut c = 10.0;
    let mut trace = Vec::new();
    for it in 1..=config.iterations {
        let theta = a.tr_mul(&z) * theta_scale + &mu;
        let mut sum_fp = 0.0;
        for l in 0..n {
            let t = threshold_funcs(theta[l], c, config.kappa);
            mu[l] = t.f;
            upsilon[l] = t.g;
            sum_fp += t.f_prime;
        }
        c = 1.0 + beta / n as f64 * upsilon.sum();
        let onsager = sum_fp / m as f64;
        z = &y - (a * &mu) * resid_scale + &z * onsager;
        let finite = c.is_finite() && mu.iter().chain(z.iter()).chain(upsilon.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite { iteration: it });
        }
        if let Some(x) = truth {
            let e = x.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
            if !e.is_finite() {
                return Err(Error::NonFinite { iteration: it });
            }
            trace.push(e);
        }
    }
    let state = AmpState {
        mu: mu.iter().copied().collect(),
        upsilon: upsilon.iter().copied().collect(),
        c,
        z: z.iter().copied().collect(),
        iteration: config.iterations,
    };
    Ok(AmpRun { state, mse_trace: trace })
}

/// Trial `index`: sparse signal, raw `N(0, 1)` matrix and `y = (A/√m)·x + w`.
pub fn amp_instance(config: &AmpConfig, index: u64) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    config.validate()?;
    let prior = Prior::Hidden(HiddenMarkovPrior::sparse(config.kappa, config.gamma)?);
    let n = config.n;
    let m = measurement_count(n, config.beta);
    let mut rng = instance_rng(config.seed, index);
    let x = sample_signal(&prior, n, &mut rng);
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let scale = 1.0 / libm::sqrt(m as f64);
    let ax = &a * DVector::from_column_slice(&x);
    let y = (0..m).map(|i| scale * ax[i] + rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((a, x, y))
}

/// One seeded trial with its MSE trace.
pub fn amp_trial(config: &AmpConfig, index: u64) -> Result<AmpRun> {
    let (a, x, y) = amp_instance(config, index)?;
    turbo_amp(&y, &a, config, Some(&x))
}

/// Replica MMSE of the sparse prior at the configured load.
pub fn sparse_replica_mmse(kappa: f64, gamma: f64, beta: f64) -> Result<f64> {
    let model = ModelSpec::matched(HiddenMarkovPrior::sparse(kappa, gamma)?, SnrLaw::fixed(1.0)?);
    replica_mmse(&model, beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpExperiment {
    pub mean_mse: f64,
    pub std_err: f64,
    pub replica_mmse: f64,
    pub final_mses: Vec<f64>,
}

/// Summarizes final MSEs from independent trials against the replica MMSE.
pub fn summarize(config: &AmpConfig, final_mses: Vec<f64>) -> Result<AmpExperiment> {
    let (mean_mse, std_err) = mean_and_stderr(&final_mses);
    let reference = sparse_replica_mmse(config.kappa, config.gamma, config.n as f64 / measurement_count(config.n, config.beta) as f64)?;
    Ok(AmpExperiment { mean_mse, std_err, replica_mmse: reference, final_mses })
}

/// Mean final MSE over `config.trials` sequential trials.
pub fn amp_experiment(config: &AmpConfig) -> Result<AmpExperiment> {
    config.validate()?;
    let finals = (0..config.trials as u64)
        .map(|i| amp_trial(config, i).map(|r| *r.mse_trace.last().expect("at least one iteration")))
        .collect::<Result<Vec<_>>>()?;
    summarize(config, finals)
}
