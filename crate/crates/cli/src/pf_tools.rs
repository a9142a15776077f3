//! Checks and evaluations on the Perron–Frobenius machinery for binary chains.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replica_core::markov_core::TransitionMatrix;
use replica_core::perron::{
    enumerate_q_states, log_pf_eigenvalue, pf_log_derivative, q_transition_matrix, rate_function, QStateSpace, RateOptions, RateResult,
    StateMarginals,
};
use replica_core::Result;

pub fn binary_kernel(alpha: f64, delta: f64) -> Result<TransitionMatrix> {
    TransitionMatrix::with_states(vec![-1.0, 1.0], &[vec![1.0 - alpha, alpha], vec![delta, 1.0 - delta]])
}

/// Q-chain of a binary source observed at the given SNR values.
pub fn binary_base(alpha: f64, delta: f64, nu: usize, snr: &[(f64, f64)]) -> Result<(QStateSpace, DMatrix<f64>)> {
    let s: Vec<f64> = snr.iter().map(|p| p.0).collect();
    let ps: Vec<f64> = snr.iter().map(|p| p.1).collect();
    let space = enumerate_q_states(&s, &[-1.0, 1.0], nu)?;
    let k = binary_kernel(alpha, delta)?;
    let base = q_transition_matrix(&space, &k, &k, &ps, &StateMarginals::Stationary)?;
    Ok((space, base))
}

/// One random case of the derivative check.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCase {
    pub nu: usize,
    pub states: usize,
    /// Largest entrywise relative error of the analytic gradient.
    pub max_rel_error: f64,
}

/// Compares `pf_log_derivative` with central differences on random binary bases and tilts.
pub fn derivative_check(cases: usize, seed: u64, step: f64) -> Result<Vec<DerivativeCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases);
    for _ in 0..cases {
        let nu = rng.random_range(0..=1usize);
        let snr = if rng.random::<bool>() {
            vec![(1.0, 1.0)]
        } else {
            let w = rng.random_range(0.1..0.9);
            vec![(1.0, w), (rng.random_range(1.5..4.0), 1.0 - w)]
        };
        let (space, base) = binary_base(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), nu, &snr)?;
        let d = space.dim();
        let mut tilt = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = rng.random_range(-0.5..0.5);
                tilt[(i, j)] = v;
                tilt[(j, i)] = v;
            }
        }
        let grad = pf_log_derivative(&base, &tilt, &space.states)?;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                let mut up = tilt.clone();
                up[(a, b)] += step;
                let mut dn = tilt.clone();
                dn[(a, b)] -= step;
                let fd = (log_pf_eigenvalue(&base, &up, &space.states)? - log_pf_eigenvalue(&base, &dn, &space.states)?) / (2.0 * step);
                worst = worst.max((fd - grad[(a, b)]).abs() / grad[(a, b)].abs().max(f64::MIN_POSITIVE));
            }
        }
        out.push(DerivativeCase { nu, states: space.len(), max_rel_error: worst });
    }
    Ok(out)
}

/// Rate function of the binary-chain Q-process at `target`.
pub fn binary_rate(alpha: f64, delta: f64, nu: usize, snr: &[(f64, f64)], target: &DMatrix<f64>, options: &RateOptions) -> Result<RateResult> {
    let (space, base) = binary_base(alpha, delta, nu, snr)?;
    rate_function(&space.states, &base, target, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_check_is_tight() {
        for case in derivative_check(5, 1, 1e-5).unwrap() {
            assert!(case.max_rel_error < 1e-6, "{case:?}");
        }
    }

    #[test]
    fn rate_at_stationary_mean_is_zero() {
        // ν = 0, s = 1: the only Q-state is [[1]]
        let r = binary_rate(0.3, 0.3, 0, &[(1.0, 1.0)], &DMatrix::from_element(1, 1, 1.0), &RateOptions::default()).unwrap();
        assert!(r.value.abs() < 1e-12);
    }
}
