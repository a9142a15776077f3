//! Seeded linear-model instances and ground-truth oracles: exact evidence by
//! enumeration or Gaussian closed form, empirical free energy, and
//! Metropolis–Hastings posterior means.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::markov_core::{HiddenMarkovPrior, MarkovPrior};
use crate::replica_solver::{ModelSpec, Prior, SnrLaw};
use crate::single_symbol::{Atom, ConditionalInputLaw};

/// Largest number of signal configurations summed by exact enumeration.
pub const ENUMERATION_BUDGET: usize = 1 << 20;

/// `round(n/β)`, halves rounded up, at least one.
pub fn measurement_count(n: usize, beta: f64) -> usize {
    let m = libm::floor(n as f64 / beta + 0.5);
    (m as usize).max(1)
}

/// Generator for instance `index` of an experiment seeded with `seed`.
///
/// ChaCha is counter based; each instance gets its own stream, so results do
/// not depend on how instances are scheduled across workers.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn sample_law<R: Rng + ?Sized>(rng: &mut R, law: &ConditionalInputLaw) -> f64 {
    let weights: Vec<f64> = law.components().iter().map(|c| c.0).collect();
    match law.components()[categorical(rng, &weights)].1 {
        Atom::PointMass(x) => x,
        Atom::Gaussian { mean, variance } => mean + libm::sqrt(variance) * normal(rng),
    }
}

/// Draws `n` consecutive symbols from a prior.
pub fn sample_signal<R: Rng + ?Sized>(prior: &Prior, n: usize, rng: &mut R) -> Vec<f64> {
    let mut x = Vec::with_capacity(n);
    match prior {
        Prior::Markov(MarkovPrior::Discrete { kernel, initial }) => {
            let mut state = categorical(rng, initial.as_slice());
            for k in 0..n {
                if k > 0 {
                    state = categorical(rng, &kernel.row(state));
                }
                x.push(kernel.states()[state]);
            }
        }
        Prior::Markov(MarkovPrior::GaussMarkov { nu, innovation_variance }) => {
            let sd = libm::sqrt(*innovation_variance);
            let mut v = libm::sqrt(innovation_variance / (1.0 - nu * nu)) * normal(rng);
            for k in 0..n {
                if k > 0 {
                    v = nu * v + sd * normal(rng);
                }
                x.push(v);
            }
        }
        Prior::Hidden(HiddenMarkovPrior { hidden, emissions, initial }) => {
            let mut state = categorical(rng, initial.as_slice());
            for k in 0..n {
                if k > 0 {
                    state = categorical(rng, &hidden.row(state));
                }
                x.push(sample_law(rng, &emissions[state]));
            }
        }
    }
    x
}

fn sample_snr<R: Rng + ?Sized>(rng: &mut R, law: &SnrLaw) -> f64 {
    let pts = law.points();
    if pts.len() == 1 {
        return pts[0].0;
    }
    let probs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    pts[categorical(rng, &probs)].0
}

/// One draw of `y = A·diag(√S)·x + w` with `A` entries `N(0, 1/m)` and `w ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelInstance {
    pub n: usize,
    pub m: usize,
    /// `m × n`.
    pub a: DMatrix<f64>,
    pub snr: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

impl LinearModelInstance {
    /// Builds an instance from explicit parts, computing `y` from the supplied noise.
    pub fn from_parts(a: DMatrix<f64>, snr: Vec<f64>, x: Vec<f64>, noise: &[f64]) -> Result<Self> {
        let (m, n) = a.shape();
        if snr.len() != n || x.len() != n || noise.len() != m {
            return Err(Error::Invalid("instance parts have inconsistent dimensions".into()));
        }
        let mut inst = LinearModelInstance { n, m, a, snr, x, y: Vec::new(), seed: 0, index: 0 };
        let clean = inst.phi() * DVector::from_column_slice(&inst.x);
        inst.y = clean.iter().zip(noise).map(|(c, w)| c + w).collect();
        Ok(inst)
    }

    /// Effective matrix `Φ = A·diag(√S)`.
    pub fn phi(&self) -> DMatrix<f64> {
        let mut p = self.a.clone();
        for (j, s) in self.snr.iter().enumerate() {
            let r = libm::sqrt(*s);
            p.column_mut(j).iter_mut().for_each(|v| *v *= r);
        }
        p
    }

    /// Load `n/m` of this instance.
    pub fn beta(&self) -> f64 {
        self.n as f64 / self.m as f64
    }
}

pub fn sample_instance(model: &ModelSpec, n: usize, beta: f64, seed: u64, index: u64) -> Result<LinearModelInstance> {
    if n == 0 || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Invalid("need n ≥ 1 and a positive load".into()));
    }
    let m = measurement_count(n, beta);
    let mut rng = instance_rng(seed, index);
    let x = sample_signal(&model.prior, n, &mut rng);
    let snr: Vec<f64> = (0..n).map(|_| sample_snr(&mut rng, &model.snr)).collect();
    let scale = 1.0 / libm::sqrt(m as f64);
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = scale * normal(&mut rng);
        }
    }
    let noise: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
    let mut inst = LinearModelInstance::from_parts(a, snr, x, &noise)?;
    inst.seed = seed;
    inst.index = index;
    Ok(inst)
}

/// How a log-evidence value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceMethod {
    ExactEnumeration,
    GaussianClosedForm,
    ImportanceSampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceEstimate {
    pub log_z: f64,
    pub method: EvidenceMethod,
    /// Zero for exact methods.
    pub std_err: f64,
    pub configurations: f64,
}

fn discrete_parts(prior: &Prior) -> Result<(&[f64], Vec<f64>, Vec<Vec<f64>>)> {
    match prior {
        Prior::Markov(MarkovPrior::Discrete { kernel, initial }) => {
            let k = kernel.dim();
            let init = initial.as_slice().iter().map(|p| libm::log(*p)).collect();
            let trans = (0..k).map(|i| (0..k).map(|j| libm::log(kernel.get(i, j))).collect()).collect();
            Ok((kernel.states(), init, trans))
        }
        _ => Err(Error::Unsupported("exact enumeration needs a discrete Markov prior".into())),
    }
}

// Streaming log-sum-exp with a weighted first moment.
struct Accumulator {
    max: f64,
    sum: f64,
    first: Vec<f64>,
}

impl Accumulator {
    fn push(&mut self, log_w: f64, x: &[f64]) {
        if log_w == f64::NEG_INFINITY {
            return;
        }
        if log_w > self.max {
            let r = libm::exp(self.max - log_w);
            self.sum *= r;
            self.first.iter_mut().for_each(|v| *v *= r);
            self.max = log_w;
        }
        let e = libm::exp(log_w - self.max);
        self.sum += e;
        for (f, xi) in self.first.iter_mut().zip(x) {
            *f += e * xi;
        }
    }
}

struct Enumeration<'a> {
    alphabet: &'a [f64],
    init: Vec<f64>,
    trans: Vec<Vec<f64>>,
    phi: DMatrix<f64>,
    inv2s2: f64,
    residual: Vec<f64>,
    x: Vec<f64>,
    acc: Accumulator,
}

impl Enumeration<'_> {
    fn visit(&mut self, depth: usize, prev: usize, log_prior: f64) {
        let n = self.x.len();
        if depth == n {
            let rr: f64 = self.residual.iter().map(|r| r * r).sum();
            let lw = log_prior - rr * self.inv2s2;
            let x = core::mem::take(&mut self.x);
            self.acc.push(lw, &x);
            self.x = x;
            return;
        }
        for sym in 0..self.alphabet.len() {
            let lp = if depth == 0 { self.init[sym] } else { self.trans[prev][sym] };
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let v = self.alphabet[sym];
            for (r, p) in self.residual.iter_mut().zip(self.phi.column(depth).iter()) {
                *r -= p * v;
            }
            self.x[depth] = v;
            self.visit(depth + 1, sym, log_prior + lp);
            for (r, p) in self.residual.iter_mut().zip(self.phi.column(depth).iter()) {
                *r += p * v;
            }
        }
    }
}

/// `log Σ_x q(x)·N(y; Φx, σ²I)` and the posterior mean, exactly.
pub fn exact_posterior(inst: &LinearModelInstance, postulated: &ModelSpec) -> Result<(EvidenceEstimate, Vec<f64>)> {
    let (alphabet, init, trans) = discrete_parts(&postulated.postulated)?;
    let configurations = libm::pow(alphabet.len() as f64, inst.n as f64);
    if configurations > ENUMERATION_BUDGET as f64 {
        return Err(Error::Budget { configurations, budget: ENUMERATION_BUDGET });
    }
    let s2 = postulated.sigma * postulated.sigma;
    let mut e = Enumeration {
        alphabet,
        init,
        trans,
        phi: inst.phi(),
        inv2s2: 0.5 / s2,
        residual: inst.y.clone(),
        x: vec![0.0; inst.n],
        acc: Accumulator { max: f64::NEG_INFINITY, sum: 0.0, first: vec![0.0; inst.n] },
    };
    e.visit(0, 0, 0.0);
    let norm = -0.5 * inst.m as f64 * libm::log(2.0 * PI * s2);
    let log_z = e.acc.max + libm::log(e.acc.sum) + norm;
    let mean = e.acc.first.iter().map(|f| f / e.acc.sum).collect();
    Ok((EvidenceEstimate { log_z, method: EvidenceMethod::ExactEnumeration, std_err: 0.0, configurations }, mean))
}

/// Exact log-evidence under the postulated discrete prior and noise level of `postulated`.
pub fn exact_log_evidence_discrete(inst: &LinearModelInstance, postulated: &ModelSpec) -> Result<EvidenceEstimate> {
    Ok(exact_posterior(inst, postulated)?.0)
}

/// `log N(y; 0, Φ Σ_X Φᵀ + I)` for a stationary Gauss-Markov prior.
pub fn gaussian_log_evidence(inst: &LinearModelInstance, nu: f64, sigma0_sq: f64) -> Result<EvidenceEstimate> {
    gaussian_log_evidence_with_noise(inst, nu, sigma0_sq, 1.0)
}

/// As [`gaussian_log_evidence`] with measurement noise variance `noise_var`.
pub fn gaussian_log_evidence_with_noise(
    inst: &LinearModelInstance,
    nu: f64,
    sigma0_sq: f64,
    noise_var: f64,
) -> Result<EvidenceEstimate> {
    let n = inst.n;
    let stat = sigma0_sq / (1.0 - nu * nu);
    let sigma_x = DMatrix::from_fn(n, n, |i, j| stat * libm::pow(nu, (i as f64 - j as f64).abs()));
    let phi = inst.phi();
    let cov = &phi * sigma_x * phi.transpose() + DMatrix::identity(inst.m, inst.m) * noise_var;
    let chol = cov.cholesky().ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
    let y = DVector::from_column_slice(&inst.y);
    let z = chol.l().solve_lower_triangular(&y).ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>();
    let log_z = -0.5 * (inst.m as f64 * libm::log(2.0 * PI) + log_det + z.norm_squared());
    Ok(EvidenceEstimate { log_z, method: EvidenceMethod::GaussianClosedForm, std_err: 0.0, configurations: f64::INFINITY })
}

/// Exact log-evidence of an instance under the model's postulated prior.
pub fn log_evidence(inst: &LinearModelInstance, model: &ModelSpec) -> Result<EvidenceEstimate> {
    match &model.postulated {
        Prior::Markov(MarkovPrior::Discrete { .. }) => exact_log_evidence_discrete(inst, model),
        Prior::Markov(MarkovPrior::GaussMarkov { nu, innovation_variance }) => {
            gaussian_log_evidence_with_noise(inst, *nu, *innovation_variance, model.sigma * model.sigma)
        }
        Prior::Hidden(_) => Err(Error::Unsupported("no exact evidence for hidden-Markov priors".into())),
    }
}

/// `−(1/n)·log Z` of instance `index`.
pub fn instance_free_energy(model: &ModelSpec, n: usize, beta: f64, seed: u64, index: u64) -> Result<f64> {
    let inst = sample_instance(model, n, beta, seed, index)?;
    Ok(-log_evidence(&inst, model)?.log_z / n as f64)
}

/// Mean and standard error of a sample.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, libm::sqrt(var / k as f64))
}

/// Average of `−(1/n)·log Z` over `trials` independent instances, with its standard error.
pub fn empirical_free_energy(model: &ModelSpec, n: usize, beta: f64, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Invalid("need at least one trial".into()));
    }
    let values = (0..trials as u64).map(|i| instance_free_energy(model, n, beta, seed, i)).collect::<Result<Vec<_>>>()?;
    Ok(mean_and_stderr(&values))
}

/// Outcome of a Metropolis–Hastings run.
#[derive(Debug, Clone, PartialEq)]
pub struct MhResult {
    pub posterior_mean: Vec<f64>,
    /// Batch-means standard error of each posterior-mean entry.
    pub posterior_mean_stderr: Vec<f64>,
    /// `‖x_true − ⟨x⟩‖² / n`.
    pub mse: f64,
    pub acceptance_rate: f64,
    /// Final random-walk scale for continuous priors.
    pub step_size: Option<f64>,
    pub warnings: Vec<String>,
}

const BATCHES: usize = 50;

struct Chain {
    sum: Vec<f64>,
    batch: Vec<f64>,
    batch_means: Vec<Vec<f64>>,
    batch_len: usize,
    in_batch: usize,
    kept: usize,
}

impl Chain {
    fn new(n: usize, kept_steps: usize) -> Self {
        Chain {
            sum: vec![0.0; n],
            batch: vec![0.0; n],
            batch_means: Vec::new(),
            batch_len: (kept_steps / BATCHES).max(1),
            in_batch: 0,
            kept: 0,
        }
    }

    fn record(&mut self, x: &[f64]) {
        for ((s, b), v) in self.sum.iter_mut().zip(self.batch.iter_mut()).zip(x) {
            *s += v;
            *b += v;
        }
        self.kept += 1;
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            let l = self.batch_len as f64;
            self.batch_means.push(self.batch.iter().map(|b| b / l).collect());
            self.batch.iter_mut().for_each(|b| *b = 0.0);
            self.in_batch = 0;
        }
    }

    fn finish(self, truth: &[f64], accepted: usize, proposals: usize, step_size: Option<f64>) -> MhResult {
        let n = truth.len();
        let k = self.kept.max(1) as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / k).collect();
        let stderr = (0..n)
            .map(|j| {
                let col: Vec<f64> = self.batch_means.iter().map(|b| b[j]).collect();
                mean_and_stderr(&col).1
            })
            .collect();
        let mse = truth.iter().zip(&mean).map(|(t, m)| (t - m) * (t - m)).sum::<f64>() / n as f64;
        let rate = if proposals == 0 { 0.0 } else { accepted as f64 / proposals as f64 };
        let mut warnings = Vec::new();
        if !(0.01..=0.99).contains(&rate) {
            warnings.push(alloc::format!("acceptance rate {rate:.4} outside [0.01, 0.99]"));
        }
        MhResult { posterior_mean: mean, posterior_mean_stderr: stderr, mse, acceptance_rate: rate, step_size, warnings }
    }
}

/// Posterior mean of `x` under the postulated prior and noise by Metropolis–Hastings.
///
/// Discrete priors use single-site moves to a uniformly chosen other symbol;
/// Gauss-Markov priors use a Gaussian random walk whose scale is tuned during
/// burn-in toward 20–50% acceptance. `steps` counts proposals, including burn-in.
pub fn mh_posterior_chain(inst: &LinearModelInstance, model: &ModelSpec, steps: usize, burn_in: usize, seed: u64) -> Result<MhResult> {
    if steps <= burn_in {
        return Err(Error::Invalid("steps must exceed burn-in".into()));
    }
    let mut rng = instance_rng(seed, inst.index);
    match &model.postulated {
        Prior::Markov(MarkovPrior::Discrete { .. }) => mh_discrete(inst, model, steps, burn_in, &mut rng),
        Prior::Markov(MarkovPrior::GaussMarkov { nu, innovation_variance }) => {
            mh_gauss_markov(inst, *nu, *innovation_variance, model.sigma, steps, burn_in, &mut rng)
        }
        Prior::Hidden(_) => Err(Error::Unsupported("Metropolis–Hastings for hidden-Markov priors".into())),
    }
}

fn mh_discrete(inst: &LinearModelInstance, model: &ModelSpec, steps: usize, burn_in: usize, rng: &mut ChaCha8Rng) -> Result<MhResult> {
    let (alphabet, init, trans) = discrete_parts(&model.postulated)?;
    let k = alphabet.len();
    let n = inst.n;
    let phi = inst.phi();
    let inv2s2 = 0.5 / (model.sigma * model.sigma);
    let col_sq: Vec<f64> = (0..n).map(|j| phi.column(j).norm_squared()).collect();
    // start from a prior draw
    let init_p: Vec<f64> = init.iter().map(|l| libm::exp(*l)).collect();
    let mut idx = vec![0usize; n];
    for j in 0..n {
        idx[j] = if j == 0 {
            categorical(rng, &init_p)
        } else {
            let row: Vec<f64> = trans[idx[j - 1]].iter().map(|l| libm::exp(*l)).collect();
            categorical(rng, &row)
        };
    }
    let mut x: Vec<f64> = idx.iter().map(|&i| alphabet[i]).collect();
    let mut r: Vec<f64> = (DVector::from_column_slice(&inst.y) - &phi * DVector::from_column_slice(&x)).iter().copied().collect();
    let log_prior_at = |idx: &[usize], j: usize, sym: usize| -> f64 {
        let mut lp = if j == 0 { init[sym] } else { trans[idx[j - 1]][sym] };
        if j + 1 < idx.len() {
            lp += trans[sym][idx[j + 1]];
        }
        lp
    };
    let mut chain = Chain::new(n, steps - burn_in);
    let (mut accepted, mut proposals) = (0usize, 0usize);
    for step in 0..steps {
        if k > 1 {
            let j = rng.random_range(0..n);
            let mut sym = rng.random_range(0..k - 1);
            if sym >= idx[j] {
                sym += 1;
            }
            let lp_new = log_prior_at(&idx, j, sym);
            if lp_new > f64::NEG_INFINITY {
                let d = alphabet[sym] - x[j];
                let dot: f64 = phi.column(j).iter().zip(&r).map(|(p, ri)| p * ri).sum();
                let d_loglik = -(-2.0 * d * dot + d * d * col_sq[j]) * inv2s2;
                let log_ratio = lp_new - log_prior_at(&idx, j, idx[j]) + d_loglik;
                if step >= burn_in {
                    proposals += 1;
                }
                let u: f64 = rng.random();
                if log_ratio >= 0.0 || libm::log(u) < log_ratio {
                    for (ri, p) in r.iter_mut().zip(phi.column(j).iter()) {
                        *ri -= p * d;
                    }
                    idx[j] = sym;
                    x[j] = alphabet[sym];
                    if step >= burn_in {
                        accepted += 1;
                    }
                }
            } else if step >= burn_in {
                proposals += 1;
            }
        }
        if step >= burn_in {
            chain.record(&x);
        }
    }
    if k == 1 {
        proposals = 1;
        accepted = 1;
    }
    Ok(chain.finish(&inst.x, accepted, proposals, None))
}

fn mh_gauss_markov(
    inst: &LinearModelInstance,
    nu: f64,
    innovation: f64,
    sigma: f64,
    steps: usize,
    burn_in: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MhResult> {
    let n = inst.n;
    let phi = inst.phi();
    let y = DVector::from_column_slice(&inst.y);
    let inv2s2 = 0.5 / (sigma * sigma);
    let log_post = |x: &DVector<f64>| {
        let r = &y - &phi * x;
        let mut lp = -x[0] * x[0] * (1.0 - nu * nu) / (2.0 * innovation);
        for k in 1..n {
            let e = x[k] - nu * x[k - 1];
            lp -= e * e / (2.0 * innovation);
        }
        lp - r.norm_squared() * inv2s2
    };
    let stat_sd = libm::sqrt(innovation / (1.0 - nu * nu));
    let mut x = DVector::from_iterator(n, (0..n).map(|_| stat_sd * normal(rng)));
    let mut lp = log_post(&x);
    let mut eps = 0.5 / libm::sqrt(n as f64);
    let mut chain = Chain::new(n, steps - burn_in);
    let (mut accepted, mut proposals) = (0usize, 0usize);
    let (mut window_acc, mut window) = (0usize, 0usize);
    for step in 0..steps {
        let prop = &x + DVector::from_iterator(n, (0..n).map(|_| eps * normal(rng)));
        let lp_new = log_post(&prop);
        let u: f64 = rng.random();
        let ok = lp_new - lp >= 0.0 || libm::log(u) < lp_new - lp;
        if ok {
            x = prop;
            lp = lp_new;
        }
        if step < burn_in {
            window += 1;
            window_acc += ok as usize;
            if window == 100 {
                let rate = window_acc as f64 / 100.0;
                if rate < 0.2 {
                    eps *= 0.8;
                } else if rate > 0.5 {
                    eps *= 1.25;
                }
                window = 0;
                window_acc = 0;
            }
        } else {
            proposals += 1;
            accepted += ok as usize;
            chain.record(x.as_slice());
        }
    }
    Ok(chain.finish(&inst.x, accepted, proposals, Some(eps)))
}
