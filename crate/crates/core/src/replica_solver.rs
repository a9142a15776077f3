//! Fixed points of the decoupled-channel equations and the resulting free
//! energy, mutual information and MMSE.
//!
//! All priors are reduced to a finite list of effective states `x₀` with
//! weight `λ_{x₀}` and a pair of conditional laws (true and postulated) for
//! the next symbol. Discrete chains use their alphabet, hidden-Markov priors
//! their hidden states, and Gauss-Markov priors Gauss–Hermite nodes of the
//! stationary marginal (every functional is polynomial in `x₀` there, so the
//! rule is exact).

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::markov_core::{joint_chain, stationary_distribution, HiddenMarkovPrior, MarkovPrior};
use crate::quadrature::Rule;
use crate::single_symbol::{self, Atom, ConditionalInputLaw, ScalarChannel};

/// Nodes used to discretize the stationary marginal of a Gauss-Markov prior.
pub const GAUSS_MARKOV_NODES: usize = 16;

/// Multi-start grid size for the fixed-point search.
pub const STARTS: usize = 16;

/// Largest admissible residual of a reported fixed point.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Solutions closer than this (in both coordinates) are merged.
pub const MERGE_TOL: f64 = 1e-6;

const DAMPING: f64 = 0.5;
const MAX_SWEEPS: usize = 20_000;

/// Law of the signal before the measurement.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Markov(MarkovPrior),
    Hidden(HiddenMarkovPrior),
}

impl From<MarkovPrior> for Prior {
    fn from(p: MarkovPrior) -> Self {
        Prior::Markov(p)
    }
}

impl From<HiddenMarkovPrior> for Prior {
    fn from(p: HiddenMarkovPrior) -> Self {
        Prior::Hidden(p)
    }
}

/// Finite distribution of the per-component SNR `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrLaw {
    points: Vec<(f64, f64)>,
}

impl SnrLaw {
    pub fn fixed(s: f64) -> Result<Self> {
        Self::new(alloc::vec![(s, 1.0)])
    }

    /// `(value, probability)` pairs.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("SNR law needs at least one value".into()));
        }
        if points.iter().any(|(s, p)| !(*s > 0.0 && s.is_finite()) || !(*p >= 0.0)) {
            return Err(Error::Invalid("SNR values must be positive and probabilities nonnegative".into()));
        }
        let sum: f64 = points.iter().map(|p| p.1).sum();
        if libm::fabs(sum - 1.0) > 1e-12 {
            return Err(Error::Invalid(alloc::format!("SNR probabilities sum to {sum}")));
        }
        Ok(SnrLaw { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().map(|(s, p)| s * p).sum()
    }
}

/// True prior, postulated prior, SNR law and postulated noise standard deviation.
/// The true noise variance is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub prior: Prior,
    pub postulated: Prior,
    pub snr: SnrLaw,
    pub sigma: f64,
}

impl ModelSpec {
    pub fn matched(prior: impl Into<Prior>, snr: SnrLaw) -> Self {
        let prior = prior.into();
        ModelSpec { postulated: prior.clone(), prior, snr, sigma: 1.0 }
    }

    pub fn new(prior: impl Into<Prior>, postulated: Option<Prior>, snr: SnrLaw, sigma: f64) -> Result<Self> {
        let prior = prior.into();
        let postulated = postulated.unwrap_or_else(|| prior.clone());
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid("postulated noise deviation must be positive".into()));
        }
        let compatible = match (&prior, &postulated) {
            (Prior::Markov(MarkovPrior::Discrete { kernel: a, .. }), Prior::Markov(MarkovPrior::Discrete { kernel: b, .. })) => {
                a.states() == b.states()
            }
            (Prior::Markov(MarkovPrior::GaussMarkov { .. }), Prior::Markov(MarkovPrior::GaussMarkov { .. })) => true,
            (Prior::Hidden(a), Prior::Hidden(b)) => a.hidden.dim() == b.hidden.dim(),
            _ => false,
        };
        if !compatible {
            return Err(Error::Invalid("postulated prior must be of the same kind and on the same states".into()));
        }
        Ok(ModelSpec { prior, postulated, snr, sigma })
    }

    pub fn is_matched(&self) -> bool {
        self.sigma == 1.0 && self.prior == self.postulated
    }
}

/// A conditioning state with its stationary weight and conditional laws.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveState {
    pub weight: f64,
    pub true_law: ConditionalInputLaw,
    pub postulated_law: ConditionalInputLaw,
}

fn kernel_rows(prior: &MarkovPrior) -> Result<Vec<ConditionalInputLaw>> {
    match prior {
        MarkovPrior::Discrete { kernel, .. } => (0..kernel.dim())
            .map(|i| {
                ConditionalInputLaw::merged(
                    kernel.states().iter().enumerate().map(|(j, &x)| (kernel.get(i, j), Atom::PointMass(x))).collect(),
                )
            })
            .collect(),
        MarkovPrior::GaussMarkov { .. } => Err(Error::Contract("kernel rows requested for a Gauss-Markov prior".into())),
    }
}

pub fn effective_states(model: &ModelSpec) -> Result<Vec<EffectiveState>> {
    let build = |w: &[f64], t: Vec<ConditionalInputLaw>, p: Vec<ConditionalInputLaw>| {
        w.iter()
            .zip(t.into_iter().zip(p))
            .map(|(&weight, (true_law, postulated_law))| EffectiveState { weight, true_law, postulated_law })
            .collect()
    };
    match (&model.prior, &model.postulated) {
        (Prior::Markov(tp @ MarkovPrior::Discrete { kernel, .. }), Prior::Markov(pp @ MarkovPrior::Discrete { .. })) => {
            let lambda = stationary_distribution(kernel)?;
            Ok(build(lambda.as_slice(), kernel_rows(tp)?, kernel_rows(pp)?))
        }
        (
            Prior::Markov(MarkovPrior::GaussMarkov { nu, innovation_variance }),
            Prior::Markov(MarkovPrior::GaussMarkov { nu: nu_q, innovation_variance: var_q }),
        ) => {
            let rule = Rule::new(GAUSS_MARKOV_NODES);
            let sd = libm::sqrt(innovation_variance / (1.0 - nu * nu));
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(z, w)| {
                    let x0 = sd * z;
                    Ok(EffectiveState {
                        weight: *w,
                        true_law: ConditionalInputLaw::gaussian(nu * x0, *innovation_variance)?,
                        postulated_law: ConditionalInputLaw::gaussian(nu_q * x0, *var_q)?,
                    })
                })
                .collect()
        }
        (Prior::Hidden(t), Prior::Hidden(p)) => {
            let jt = joint_chain(t)?;
            let jp = joint_chain(p)?;
            Ok(build(jt.weights.as_slice(), jt.laws, jp.laws))
        }
        _ => Err(Error::Invalid("true and postulated priors are of different kinds".into())),
    }
}

/// `(Σλ E[S ℰ], Σλ E[S 𝒱])` and the per-state pieces needed for the free energy.
#[derive(Debug, Clone)]
struct Evaluator {
    states: Vec<EffectiveState>,
    snr: SnrLaw,
    sigma: f64,
    matched: bool,
}

impl Evaluator {
    fn new(model: &ModelSpec) -> Result<Self> {
        Ok(Evaluator { states: effective_states(model)?, snr: model.snr.clone(), sigma: model.sigma, matched: model.is_matched() })
    }

    fn channel<'a>(&self, st: &'a EffectiveState, s: f64, eta: f64, xi: f64) -> ScalarChannel<'a> {
        ScalarChannel { eta, xi, s, true_law: &st.true_law, postulated_law: &st.postulated_law }
    }

    fn error_sums(&self, eta: f64, xi: f64) -> Result<(f64, f64)> {
        let (mut e, mut v) = (0.0, 0.0);
        for st in &self.states {
            for &(s, ps) in self.snr.points() {
                if ps == 0.0 {
                    continue;
                }
                let m = single_symbol::moments(&self.channel(st, s, eta, xi))?;
                e += st.weight * ps * s * m.mse;
                v += st.weight * ps * s * m.var;
            }
        }
        Ok((e, v))
    }

    // Right-hand sides mapped back to (η, ξ).
    fn update(&self, eta: f64, xi: f64, beta: f64) -> Result<(f64, f64)> {
        let (e, v) = self.error_sums(eta, xi)?;
        let eta_new = 1.0 / (1.0 + beta * e);
        let xi_new = if self.matched { eta_new } else { 1.0 / (self.sigma * self.sigma + beta * v) };
        Ok((eta_new, xi_new))
    }

    fn residual(&self, eta: f64, xi: f64, beta: f64) -> Result<f64> {
        let (a, b) = self.update(eta, xi, beta)?;
        Ok(libm::fmax(libm::fabs(a - eta), libm::fabs(b - xi)))
    }

    fn state_term(&self, st: &EffectiveState, eta: f64, xi: f64, beta: f64) -> Result<f64> {
        let mut h = 0.0;
        for &(s, ps) in self.snr.points() {
            if ps == 0.0 {
                continue;
            }
            h += ps * single_symbol::cross_entropy(&self.channel(st, s, eta, xi))?;
        }
        Ok(h + constants(eta, xi, beta, self.sigma))
    }

    fn free_energy(&self, eta: f64, xi: f64, beta: f64) -> Result<f64> {
        let mut g = 0.0;
        for st in &self.states {
            g += st.weight * self.state_term(st, eta, xi, beta)?;
        }
        Ok(g)
    }

    fn second_moment(&self) -> f64 {
        self.states.iter().map(|st| st.weight * st.true_law.second_moment()).sum()
    }

    fn mean_square_estimate(&self, eta: f64, xi: f64) -> Result<f64> {
        let mut t = 0.0;
        for st in &self.states {
            for &(s, ps) in self.snr.points() {
                if ps == 0.0 {
                    continue;
                }
                t += st.weight * ps * single_symbol::posterior_mean_second_moment(&self.channel(st, s, eta, xi))?;
            }
        }
        Ok(t)
    }

    fn mse(&self, eta: f64, xi: f64) -> Result<f64> {
        let mut t = 0.0;
        for st in &self.states {
            for &(s, ps) in self.snr.points() {
                if ps == 0.0 {
                    continue;
                }
                t += st.weight * ps * single_symbol::conditional_mse(&self.channel(st, s, eta, xi))?;
            }
        }
        Ok(t)
    }
}

/// The `η`-, `ξ`-, `β`-dependent part of `𝒢(x₀)`, in nats.
pub fn constants(eta: f64, xi: f64, beta: f64, sigma: f64) -> f64 {
    let ln = libm::log;
    ((xi - 1.0) - ln(xi)) / (2.0 * beta) - 0.5 * ln(2.0 * PI / xi) - xi / (2.0 * eta)
        + sigma * sigma * xi * (eta - xi) / (2.0 * beta * eta)
        + ln(2.0 * PI) / (2.0 * beta)
        + xi / (2.0 * beta * eta)
}

/// A solution of the fixed-point system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub eta: f64,
    pub xi: f64,
    pub residual: f64,
}

/// A fixed point together with its free-energy value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub eta: f64,
    pub xi: f64,
    pub free_energy: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(alloc::format!("load {beta} must be positive and finite")))
    }
}

/// Every fixed point reached by damped iteration from a log-spaced grid of starts,
/// merged and sorted by `η`.
pub fn solve_fixed_point(model: &ModelSpec, beta: f64) -> Result<Vec<FixedPoint>> {
    check_beta(beta)?;
    solve_with(&Evaluator::new(model)?, beta)
}

fn solve_with(ev: &Evaluator, beta: f64) -> Result<Vec<FixedPoint>> {
    let inv_s2 = 1.0 / (ev.sigma * ev.sigma);
    let mut found: Vec<FixedPoint> = Vec::new();
    let mut last_residual = f64::NAN;
    for k in 0..STARTS {
        let t = libm::pow(10.0, -3.0 + 3.0 * k as f64 / (STARTS - 1) as f64);
        let (mut eta, mut xi) = (t, if ev.matched { t } else { t * inv_s2 });
        for _ in 0..MAX_SWEEPS {
            let (a, b) = ev.update(eta, xi, beta)?;
            let ne = (1.0 - DAMPING) * eta + DAMPING * a;
            let nx = if ev.matched { ne } else { (1.0 - DAMPING) * xi + DAMPING * b };
            let delta = libm::fmax(libm::fabs(ne - eta), libm::fabs(nx - xi));
            eta = ne;
            xi = nx;
            if delta < 1e-14 {
                break;
            }
        }
        let residual = ev.residual(eta, xi, beta)?;
        last_residual = residual;
        if residual < RESIDUAL_TOL {
            found.push(FixedPoint { eta, xi, residual });
        }
    }
    if found.is_empty() {
        return Err(Error::Solver(alloc::format!("no start converged; last residual {last_residual}")));
    }
    found.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(a.xi.total_cmp(&b.xi)));
    let mut merged: Vec<FixedPoint> = Vec::new();
    for p in found {
        match merged.last() {
            Some(q) if libm::fabs(p.eta - q.eta) < MERGE_TOL && libm::fabs(p.xi - q.xi) < MERGE_TOL => {}
            _ => merged.push(p),
        }
    }
    Ok(merged)
}

/// `𝒢(x₀)` for effective state `index` at a candidate `(η, ξ)`.
pub fn free_energy_term(model: &ModelSpec, index: usize, eta: f64, xi: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let ev = Evaluator::new(model)?;
    let st = ev.states.get(index).ok_or_else(|| Error::Invalid(alloc::format!("no effective state {index}")))?;
    ev.state_term(st, eta, xi, beta)
}

/// Largest violation of the two fixed-point equations at `(η, ξ)`.
pub fn fixed_point_residual(model: &ModelSpec, eta: f64, xi: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Evaluator::new(model)?.residual(eta, xi, beta)
}

/// Replica prediction at one load.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSolution {
    pub beta: f64,
    pub eta: f64,
    pub xi: f64,
    /// Nats per signal component.
    pub free_energy: f64,
    /// Only defined for matched models.
    pub mutual_info: Option<f64>,
    /// Mean-square error of the (generalized) posterior mean.
    pub mmse: f64,
    /// Whether `mmse` lies in `[0, E[X₁²]]`; the value itself is never clamped.
    pub mmse_in_range: bool,
    pub residual: f64,
    pub all_solutions: Vec<Candidate>,
}

pub fn free_energy(model: &ModelSpec, beta: f64) -> Result<ReplicaSolution> {
    check_beta(beta)?;
    let ev = Evaluator::new(model)?;
    let points = solve_with(&ev, beta)?;
    let mut all = Vec::with_capacity(points.len());
    for p in &points {
        all.push(Candidate { eta: p.eta, xi: p.xi, free_energy: ev.free_energy(p.eta, p.xi, beta)? });
    }
    let (best, cand) = all
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.free_energy.total_cmp(&b.1.free_energy))
        .map(|(i, c)| (i, *c))
        .ok_or_else(|| Error::Solver("empty solution set".into()))?;
    let mmse = if ev.matched { ev.second_moment() - ev.mean_square_estimate(cand.eta, cand.xi)? } else { ev.mse(cand.eta, cand.xi)? };
    let top = ev.second_moment();
    Ok(ReplicaSolution {
        beta,
        eta: cand.eta,
        xi: cand.xi,
        free_energy: cand.free_energy,
        mutual_info: ev.matched.then(|| cand.free_energy - mutual_info_offset(beta)),
        mmse,
        mmse_in_range: (-1e-12..=top + 1e-12).contains(&mmse),
        residual: points[best].residual,
        all_solutions: all,
    })
}

/// `F − C` in nats: the entropy of the unit-variance measurement noise per signal component.
pub fn mutual_info_offset(beta: f64) -> f64 {
    (1.0 + libm::log(2.0 * PI)) / (2.0 * beta)
}

/// Average mutual information per signal component in nats.
pub fn mutual_information(model: &ModelSpec, beta: f64) -> Result<f64> {
    if !model.is_matched() {
        return Err(Error::Contract("mutual information is defined for matched models only".into()));
    }
    Ok(free_energy(model, beta)?.free_energy - mutual_info_offset(beta))
}

/// MMSE `E[X₁²] − Σλ E[⟨X₁ | X₀⟩²]` at the selected fixed point.
pub fn replica_mmse(model: &ModelSpec, beta: f64) -> Result<f64> {
    if !model.is_matched() {
        return Err(Error::Contract("the MMSE formula needs a matched model".into()));
    }
    Ok(free_energy(model, beta)?.mmse)
}

/// Matched Gauss-Markov fixed point, `a = s₀σ0²`.
pub fn gauss_markov_eta(beta: f64, a: f64) -> f64 {
    let b = (beta - 1.0) * a + 1.0;
    let disc = libm::sqrt(b * b + 4.0 * a);
    // (−b + √(b²+4a)) / 2a, rationalized to avoid cancellation for small a
    2.0 / (b + disc)
}

/// Matched Gauss-Markov free energy in nats; independent of `ν`.
pub fn gauss_markov_free_energy(beta: f64, a: f64) -> f64 {
    let eta = gauss_markov_eta(beta, a);
    0.5 * libm::log(2.0 * PI * core::f64::consts::E * (a + 1.0 / eta)) + constants(eta, eta, beta, 1.0)
}

/// Nats to bits.
pub fn to_bits(nats: f64) -> f64 {
    nats / core::f64::consts::LN_2
}
