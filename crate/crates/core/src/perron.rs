//! Perron-Frobenius tools for the chain of rank-one overlap matrices
//! `Q̄ = s·x·xᵀ`, `x ∈ 𝒳^{ν+1}`: state enumeration, tilted kernels,
//! eigen-triples, the log-eigenvalue gradient, growth rates and the
//! large-deviation rate function.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::markov_core::{is_irreducible, stationary_distribution, ProbabilityVector, TransitionMatrix};

/// Largest replica count supported by the enumeration.
pub const MAX_NU: usize = 3;

/// One `(s, x₀, …, x_ν)` tuple, stored as alphabet indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTuple {
    pub s: usize,
    pub x: Vec<usize>,
}

/// Deduplicated overlap matrices with the map from tuples to states.
#[derive(Debug, Clone)]
pub struct QStateSpace {
    pub nu: usize,
    pub s_alphabet: Vec<f64>,
    pub x_alphabet: Vec<f64>,
    pub states: Vec<DMatrix<f64>>,
    pub tuples: Vec<QTuple>,
    /// `membership[t]` is the state id of `tuples[t]`.
    pub membership: Vec<usize>,
}

impl QStateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nu + 1
    }

    /// State id of the tuple `(s, x)` given by alphabet indices.
    pub fn state_of(&self, s: usize, x: &[usize]) -> Option<usize> {
        self.tuples.iter().position(|t| t.s == s && t.x == x).map(|t| self.membership[t])
    }
}

fn dedup_key(m: &DMatrix<f64>) -> Vec<i64> {
    let d = m.nrows();
    let mut key = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            key.push(libm::round(m[(i, j)] * 1e12) as i64);
        }
    }
    key
}

pub fn enumerate_q_states(s_alphabet: &[f64], x_alphabet: &[f64], nu: usize) -> Result<QStateSpace> {
    if s_alphabet.is_empty() || x_alphabet.is_empty() {
        return Err(Error::Invalid("alphabets must be nonempty".into()));
    }
    if nu > MAX_NU {
        return Err(Error::Invalid(alloc::format!("replica count {nu} exceeds {MAX_NU}")));
    }
    if s_alphabet.iter().chain(x_alphabet).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("alphabet values must be finite".into()));
    }
    let d = nu + 1;
    let k = x_alphabet.len();
    let mut keys: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    let mut states = Vec::new();
    let mut tuples = Vec::new();
    let mut membership = Vec::new();
    for (si, &s) in s_alphabet.iter().enumerate() {
        let mut idx = vec![0usize; d];
        loop {
            let x = DVector::from_iterator(d, idx.iter().map(|&i| x_alphabet[i]));
            let q = &x * x.transpose() * s;
            let id = *keys.entry(dedup_key(&q)).or_insert_with(|| {
                states.push(q);
                states.len() - 1
            });
            tuples.push(QTuple { s: si, x: idx.clone() });
            membership.push(id);
            // odometer over 𝒳^{ν+1}
            let mut pos = 0;
            while pos < d {
                idx[pos] += 1;
                if idx[pos] < k {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == d {
                break;
            }
        }
    }
    Ok(QStateSpace { nu, s_alphabet: s_alphabet.to_vec(), x_alphabet: x_alphabet.to_vec(), states, tuples, membership })
}

/// Marginals of `X_{n−1}` used in the transition ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum StateMarginals {
    /// Stationary laws of the true and postulated kernels.
    Stationary,
    Given { true_marginal: ProbabilityVector, postulated_marginal: ProbabilityVector },
}

/// Transition matrix of the overlap chain: replica 0 follows the true kernel,
/// replicas `1..=ν` follow the postulated kernel, and `S` is i.i.d. with `s_dist`.
pub fn q_transition_matrix(
    space: &QStateSpace,
    true_kernel: &TransitionMatrix,
    postulated_kernel: &TransitionMatrix,
    s_dist: &[f64],
    marginals: &StateMarginals,
) -> Result<DMatrix<f64>> {
    let k = space.x_alphabet.len();
    for kernel in [true_kernel, postulated_kernel] {
        if kernel.states() != space.x_alphabet.as_slice() {
            return Err(Error::Invalid("kernel state labels differ from the signal alphabet".into()));
        }
    }
    if s_dist.len() != space.s_alphabet.len() {
        return Err(Error::Invalid("SNR distribution length differs from the SNR alphabet".into()));
    }
    let s_dist = ProbabilityVector::new(s_dist.to_vec())?;
    let (p0, q0) = match marginals {
        StateMarginals::Stationary => {
            (stationary_distribution(true_kernel)?, stationary_distribution(postulated_kernel)?)
        }
        StateMarginals::Given { true_marginal, postulated_marginal } => {
            if true_marginal.len() != k || postulated_marginal.len() != k {
                return Err(Error::Invalid("marginal length differs from the signal alphabet".into()));
            }
            (true_marginal.clone(), postulated_marginal.clone())
        }
    };
    let weight = |t: &QTuple| {
        s_dist[t.s] * p0[t.x[0]] * t.x[1..].iter().map(|&i| q0[i]).product::<f64>()
    };
    let step = |from: &QTuple, to: &QTuple| {
        s_dist[to.s]
            * true_kernel.get(from.x[0], to.x[0])
            * from.x[1..].iter().zip(&to.x[1..]).map(|(&a, &b)| postulated_kernel.get(a, b)).product::<f64>()
    };
    let n = space.len();
    let mut num = DMatrix::zeros(n, n);
    let mut den = vec![0.0; n];
    for (a, from) in space.tuples.iter().enumerate() {
        let w = weight(from);
        if w == 0.0 {
            continue;
        }
        let i = space.membership[a];
        den[i] += w;
        for (b, to) in space.tuples.iter().enumerate() {
            num[(i, space.membership[b])] += w * step(from, to);
        }
    }
    for (i, d) in den.iter().enumerate() {
        if *d <= 0.0 {
            return Err(Error::Numeric(alloc::format!("overlap state {i} has zero source probability")));
        }
        for j in 0..n {
            num[(i, j)] /= d;
        }
    }
    Ok(num)
}

/// `tr(Q̃ Q̄)` for symmetric arguments.
fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Kernel reweighted by `e^{tr(Q̃Q̄ⱼ)}` on the destination state.
#[derive(Debug, Clone)]
pub struct TiltedMatrix {
    pub base: DMatrix<f64>,
    pub tilt: DMatrix<f64>,
    pub tilted: DMatrix<f64>,
}

impl TiltedMatrix {
    pub fn new(base: &DMatrix<f64>, tilt: &DMatrix<f64>, states: &[DMatrix<f64>]) -> Result<Self> {
        let (tilted, shift) = shifted_tilt(base, tilt, states)?;
        Ok(TiltedMatrix { base: base.clone(), tilt: tilt.clone(), tilted: tilted * libm::exp(shift) })
    }
}

// Tilted matrix divided by e^{shift}, with shift = max exponent so nothing overflows.
fn shifted_tilt(base: &DMatrix<f64>, tilt: &DMatrix<f64>, states: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, f64)> {
    let n = base.nrows();
    if base.ncols() != n || states.len() != n {
        return Err(Error::Invalid("base matrix and state list disagree in size".into()));
    }
    if let Some(q) = states.first() {
        if q.shape() != tilt.shape() {
            return Err(Error::Invalid("tilt shape differs from the overlap matrices".into()));
        }
    }
    let exps: Vec<f64> = states.iter().map(|q| trace_product(tilt, q)).collect();
    let shift = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let m = DMatrix::from_fn(n, n, |i, j| base[(i, j)] * libm::exp(exps[j] - shift));
    Ok((m, shift))
}

/// Perron eigenvalue with positive left and right eigenvectors, `λᵀψ = 1`, `‖λ‖₁ = 1`.
#[derive(Debug, Clone)]
pub struct PfTriple {
    pub rho: f64,
    pub lambda: DVector<f64>,
    pub psi: DVector<f64>,
}

pub fn pf_decomposition(m: &DMatrix<f64>) -> Result<PfTriple> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::Invalid("matrix must be square and nonempty".into()));
    }
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid("matrix has a negative or non-finite entry".into()));
    }
    if !is_irreducible(m) {
        return Err(Error::Reducible);
    }
    let (rho, mut lambda, mut psi) = match n {
        1 => (m[(0, 0)], DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)),
        2 => closed_form_2x2(m),
        _ => {
            let psi = power_vector(m)?;
            let lambda = power_vector(&m.transpose())?;
            let rho = lambda.dot(&(m * &psi)) / lambda.dot(&psi);
            (rho, lambda, psi)
        }
    };
    if !(rho > 0.0) {
        return Err(Error::Numeric("Perron eigenvalue is not positive".into()));
    }
    lambda /= lambda.sum();
    psi /= lambda.dot(&psi);
    if lambda.iter().chain(psi.iter()).any(|v| !(*v > 0.0)) {
        return Err(Error::Numeric("Perron eigenvector has a nonpositive entry".into()));
    }
    Ok(PfTriple { rho, lambda, psi })
}

fn closed_form_2x2(m: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let h = 0.5 * (a - d);
    let r = libm::sqrt(h * h + b * c);
    // ρ − a without cancellation
    let gap = if h >= 0.0 { b * c / (r + h) } else { r - h };
    let rho = 0.5 * (a + d) + r;
    (rho, DVector::from_vec(vec![c, gap]), DVector::from_vec(vec![b, gap]))
}

// Positive right eigenvector by shifted power iteration followed by inverse-iteration polish.
fn power_vector(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    let bound = (0..n).map(|i| m.row(i).sum()).fold(0.0, f64::max);
    // the shift breaks periodicity: other peripheral eigenvalues move inside the circle
    let shifted = m + DMatrix::identity(n, n) * bound;
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..20_000 {
        let mut next = &shifted * &v;
        next /= next.sum();
        let delta = (&next - &v).amax();
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    let rho = (m * &v).sum() / v.sum();
    let mu = rho * (1.0 + 1e-10) + 1e-300;
    let lu = (m - DMatrix::identity(n, n) * mu).lu();
    for _ in 0..2 {
        match lu.solve(&v) {
            Some(mut next) if next.iter().all(|x| x.is_finite()) => {
                let s = next.sum();
                if s == 0.0 {
                    break;
                }
                next /= s;
                v = next;
            }
            _ => break,
        }
    }
    if v.iter().any(|x| !(*x > 0.0)) {
        // tiny negative round-off on entries that should be positive
        if v.iter().all(|x| *x > -1e-14) {
            v.iter_mut().for_each(|x| *x = x.abs().max(f64::MIN_POSITIVE));
        } else {
            return Err(Error::Numeric("power iteration lost positivity".into()));
        }
    }
    Ok(v)
}

/// `log ρ` of the tilted matrix, evaluated without overflow.
pub fn log_pf_eigenvalue(base: &DMatrix<f64>, tilt: &DMatrix<f64>, states: &[DMatrix<f64>]) -> Result<f64> {
    let (m, shift) = shifted_tilt(base, tilt, states)?;
    Ok(libm::log(pf_decomposition(&m)?.rho) + shift)
}

/// Gradient of `log ρ(P_Q̃)` with respect to `Q̃`:
/// `(1/ρ) Σᵢ λᵢ Σⱼ ψⱼ Q̄ⱼ P_ij e^{tr(Q̃Q̄ⱼ)}`.
pub fn pf_log_derivative(base: &DMatrix<f64>, tilt: &DMatrix<f64>, states: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    Ok(log_pf_with_gradient(base, tilt, states)?.1)
}

fn log_pf_with_gradient(
    base: &DMatrix<f64>,
    tilt: &DMatrix<f64>,
    states: &[DMatrix<f64>],
) -> Result<(f64, DMatrix<f64>)> {
    let (m, shift) = shifted_tilt(base, tilt, states)?;
    let t = pf_decomposition(&m)?;
    let n = m.nrows();
    let mut grad = DMatrix::zeros(tilt.nrows(), tilt.ncols());
    for j in 0..n {
        let c: f64 = (0..n).map(|i| t.lambda[i] * m[(i, j)]).sum::<f64>() * t.psi[j];
        grad += &states[j] * c;
    }
    grad /= t.rho;
    Ok((libm::log(t.rho) + shift, grad))
}

/// `(n, (1/n)·log Σⱼ (Mⁿ)_{row,j} hⱼ)` for `n = 1..=n_max`, accumulated in the log domain.
pub fn growth_rate(m: &DMatrix<f64>, h: &DVector<f64>, row: usize, n_max: usize) -> Result<Vec<(usize, f64)>> {
    let n = m.nrows();
    if m.ncols() != n || h.len() != n || row >= n {
        return Err(Error::Invalid("inconsistent dimensions for the growth rate".into()));
    }
    if h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("weight vector must be strictly positive".into()));
    }
    if m.iter().any(|v| *v < 0.0) || !is_irreducible(m) {
        return Err(Error::Invalid("growth rate needs a nonnegative irreducible matrix".into()));
    }
    let mut v = h.clone();
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(n_max);
    for k in 1..=n_max {
        v = m * v;
        let top = v.amax();
        if !(top > 0.0 && top.is_finite()) {
            return Err(Error::Numeric("growth recursion degenerated".into()));
        }
        v /= top;
        log_scale += libm::log(top);
        out.push((k, (log_scale + libm::log(v[row])) / k as f64));
    }
    Ok(out)
}

/// Settings for [`rate_function`].
#[derive(Debug, Clone, Copy)]
pub struct RateOptions {
    /// Objective values beyond this are reported as infeasible.
    pub cap: f64,
    /// Frobenius norm of the gradient at which the ascent stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { cap: 1e3, tolerance: 1e-8, max_iterations: 20_000 }
    }
}

#[derive(Debug, Clone)]
pub struct RateResult {
    pub value: f64,
    pub tilt: DMatrix<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// `I(Q) = sup_{Q̃} tr(Q̃Q) − log ρ(P_Q̃)` by gradient ascent from `Q̃ = 0`.
///
/// Steps follow the Barzilai–Borwein length with Armijo backtracking; the
/// objective is concave because `log ρ` of a tilted kernel is convex.
pub fn rate_function(
    states: &[DMatrix<f64>],
    base: &DMatrix<f64>,
    target: &DMatrix<f64>,
    options: &RateOptions,
) -> Result<RateResult> {
    let d = target.nrows();
    if target.ncols() != d || states.first().is_some_and(|q| q.shape() != target.shape()) {
        return Err(Error::Invalid("target shape differs from the overlap matrices".into()));
    }
    let eval = |tilt: &DMatrix<f64>| -> Result<(f64, DMatrix<f64>)> {
        let (lr, g) = log_pf_with_gradient(base, tilt, states)?;
        Ok((trace_product(tilt, target) - lr, target - g))
    };
    let mut tilt = DMatrix::zeros(d, d);
    let (mut f, mut g) = eval(&tilt)?;
    let mut step = 1.0;
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    for it in 0..options.max_iterations {
        let gn = g.norm();
        if gn < options.tolerance {
            return Ok(RateResult { value: f, tilt, iterations: it, gradient_norm: gn, converged: true });
        }
        if f > options.cap {
            return Err(Error::Infeasible { cap: options.cap });
        }
        if let Some((pt, pg)) = &prev {
            let s = &tilt - pt;
            let y = &g - pg;
            let sy = s.dot(&y);
            // ascent on a concave function: sᵀy < 0
            if sy < 0.0 {
                step = (s.dot(&s) / -sy).clamp(1e-12, 1e12);
            }
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            let cand = &tilt + &g * t;
            if let Ok((fc, gc)) = eval(&cand) {
                if fc.is_finite() && fc >= f + 1e-4 * t * gn * gn {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no ascent possible at machine precision
            return Ok(RateResult { value: f, tilt, iterations: it, gradient_norm: gn, converged: gn < 1e-6 });
        };
        prev = Some((core::mem::replace(&mut tilt, cand), core::mem::replace(&mut g, gc)));
        f = fc;
        step = t;
    }
    let gn = g.norm();
    if f > options.cap {
        return Err(Error::Infeasible { cap: options.cap });
    }
    Ok(RateResult { value: f, tilt, iterations: options.max_iterations, gradient_norm: gn, converged: gn < options.tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn enumeration_examples() {
        let sp = enumerate_q_states(&[1.0], &[-1.0, 1.0], 0).unwrap();
        assert_eq!(sp.len(), 1);
        assert_eq!(sp.states[0][(0, 0)], 1.0);
        let sp = enumerate_q_states(&[1.0], &[-1.0, 1.0], 1).unwrap();
        assert_eq!(sp.len(), 2);
        assert_eq!(sp.tuples.len(), 4);
        assert_eq!(sp.state_of(0, &[0, 0]), sp.state_of(0, &[1, 1]));
        assert_eq!(sp.state_of(0, &[0, 1]), sp.state_of(0, &[1, 0]));
        assert_ne!(sp.state_of(0, &[0, 0]), sp.state_of(0, &[0, 1]));
        let sp = enumerate_q_states(&[1.0, 4.0], &[-1.0, 1.0], 0).unwrap();
        assert_eq!(sp.len(), 2);
        assert!(enumerate_q_states(&[], &[1.0], 0).is_err());
        assert!(enumerate_q_states(&[1.0], &[1.0], 4).is_err());
    }

    #[test]
    fn closed_form_pf() {
        let t = pf_decomposition(&m2(2.0, 1.0, 1.0, 2.0)).unwrap();
        assert!((t.rho - 3.0).abs() < 1e-15);
        assert!((t.lambda[0] - 0.5).abs() < 1e-15 && (t.lambda[1] - 0.5).abs() < 1e-15);
        assert!((t.psi[0] - 1.0).abs() < 1e-15 && (t.psi[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stochastic_pf() {
        let p = DMatrix::from_row_slice(3, 3, &[0.1, 0.6, 0.3, 0.5, 0.0, 0.5, 0.2, 0.2, 0.6]);
        let t = pf_decomposition(&p).unwrap();
        assert!((t.rho - 1.0).abs() < 1e-13);
        for v in t.psi.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_matrix_converges() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
        let t = pf_decomposition(&p).unwrap();
        assert!((t.rho - libm::cbrt(2.0)).abs() < 1e-13);
    }

    #[test]
    fn rejects_reducible_or_negative() {
        assert_eq!(pf_decomposition(&m2(1.0, 0.0, 0.0, 1.0)).unwrap_err(), Error::Reducible);
        assert!(pf_decomposition(&m2(1.0, -0.1, 0.3, 1.0)).is_err());
    }

    #[test]
    fn zero_tilt_is_identity_operation() {
        let sp = enumerate_q_states(&[1.0], &[-1.0, 1.0], 1).unwrap();
        let base = m2(0.6, 0.4, 0.3, 0.7);
        let tm = TiltedMatrix::new(&base, &DMatrix::zeros(2, 2), &sp.states).unwrap();
        assert_eq!(tm.tilted, base);
        assert!((pf_decomposition(&tm.tilted).unwrap().rho - 1.0).abs() < 1e-15);
    }

    #[test]
    fn growth_of_stochastic_is_zero() {
        let p = DMatrix::from_row_slice(3, 3, &[0.1, 0.6, 0.3, 0.5, 0.0, 0.5, 0.2, 0.2, 0.6]);
        let seq = growth_rate(&p, &DVector::from_element(3, 1.0), 1, 50).unwrap();
        assert!(seq.iter().all(|(_, v)| v.abs() < 1e-15));
        let seq = growth_rate(&m2(2.0, 1.0, 1.0, 2.0), &DVector::from_element(2, 1.0), 0, 200).unwrap();
        assert!((seq[199].1 - libm::log(3.0)).abs() < 1e-14);
    }

    #[test]
    fn infeasible_target_is_reported() {
        let sp = enumerate_q_states(&[1.0], &[-1.0, 1.0], 1).unwrap();
        let base = m2(0.6, 0.4, 0.3, 0.7);
        let target = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let r = rate_function(&sp.states, &base, &target, &RateOptions::default());
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }
}
