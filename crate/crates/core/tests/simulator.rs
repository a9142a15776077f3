use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use replica_core::markov_core::{MarkovPrior, ProbabilityVector, TransitionMatrix};
use replica_core::replica_solver::{ModelSpec, Prior, SnrLaw};
use replica_core::simulator::*;

fn unit() -> SnrLaw {
    SnrLaw::fixed(1.0).unwrap()
}

fn binary(a: f64, d: f64) -> ModelSpec {
    ModelSpec::matched(MarkovPrior::binary(a, d).unwrap(), unit())
}

fn gauss(nu: f64) -> ModelSpec {
    ModelSpec::matched(MarkovPrior::gauss_markov(nu, 1.0).unwrap(), unit())
}

fn zero_instance(n: usize, m: usize, x: Vec<f64>, seed: u64) -> LinearModelInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    LinearModelInstance::from_parts(DMatrix::zeros(m, n), vec![1.0; n], x, &noise).unwrap()
}

#[test]
fn gauss_markov_lag_one_autocorrelation() {
    for &nu in &[0.1, 0.5, 0.8] {
        let x = sample_signal(&gauss(nu).prior, 100_000, &mut instance_rng(3, 0));
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let cov = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
        let r = cov / var;
        // large-sample standard error of the lag-1 autocorrelation of an AR(1) chain
        let se = ((1.0 - nu * nu) / n).sqrt();
        assert!((r - nu).abs() < 3.0 * se, "ν={nu}: {r}");
        // stationary start: the first symbol already has variance 1/(1−ν²)
        let firsts: Vec<f64> = (0..4000).map(|i| sample_signal(&gauss(nu).prior, 1, &mut instance_rng(9, i))[0]).collect();
        let v0 = firsts.iter().map(|v| v * v).sum::<f64>() / 4000.0;
        let want = 1.0 / (1.0 - nu * nu);
        assert!((v0 - want).abs() < 4.0 * want * (2.0f64 / 4000.0).sqrt());
    }
}

#[test]
fn symmetric_binary_chain_is_balanced() {
    let x = sample_signal(&binary(0.3, 0.3).prior, 100_000, &mut instance_rng(1, 0));
    let frac = x.iter().filter(|v| **v > 0.0).count() as f64 / x.len() as f64;
    // correlation 1 − α − δ = 0.4 inflates the variance by (1 + 0.4)/(1 − 0.4)
    let se = (0.25 * 1.4 / 0.6 / x.len() as f64).sqrt();
    assert!((frac - 0.5).abs() < 3.0 * se, "{frac}");
}

#[test]
fn evidence_matches_naive_monte_carlo() {
    let model = binary(0.2, 0.5);
    let inst = sample_instance(&model, 8, 1.0, 5, 0).unwrap();
    let exact = exact_log_evidence_discrete(&inst, &model).unwrap();
    assert_eq!(exact.method, EvidenceMethod::ExactEnumeration);
    assert_eq!(exact.std_err, 0.0);
    let phi = inst.phi();
    let y = DVector::from_column_slice(&inst.y);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let draws = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let x = sample_signal(&model.prior, 8, &mut rng);
        let r = &y - &phi * DVector::from_column_slice(&x);
        let l = (-0.5 * r.norm_squared()).exp() / (2.0 * PI).powf(inst.m as f64 / 2.0);
        s += l;
        s2 += l * l;
    }
    let mean = s / draws as f64;
    let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
    assert!((exact.log_z.exp() - mean).abs() < 3.0 * se, "{} vs {mean} ± {se}", exact.log_z.exp());
}

#[test]
fn flat_likelihood_limit() {
    let truth = MarkovPrior::binary(0.3, 0.3).unwrap();
    let sigma = 1e4;
    let model = ModelSpec::new(truth.clone(), None, unit(), sigma).unwrap();
    let inst = sample_instance(&model, 6, 0.5, 2, 0).unwrap();
    let lz = exact_log_evidence_discrete(&inst, &model).unwrap().log_z;
    let limit = -(inst.m as f64) * ((2.0 * PI).sqrt() * sigma).ln();
    assert!((lz - limit).abs() < 1e-6, "{lz} vs {limit}");
}

#[test]
fn evidence_is_row_permutation_covariant() {
    let model = binary(0.3, 0.3);
    let inst = sample_instance(&model, 7, 0.7, 8, 1).unwrap();
    let m = inst.m;
    let perm: Vec<usize> = (0..m).rev().collect();
    let mut other = inst.clone();
    other.a = DMatrix::from_fn(m, inst.n, |i, j| inst.a[(perm[i], j)]);
    other.y = perm.iter().map(|&i| inst.y[i]).collect();
    let a = exact_log_evidence_discrete(&inst, &model).unwrap().log_z;
    let b = exact_log_evidence_discrete(&other, &model).unwrap().log_z;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn enumeration_budget_is_enforced() {
    let model = binary(0.3, 0.3);
    let inst = sample_instance(&model, 21, 1.0, 1, 0).unwrap();
    assert!(exact_log_evidence_discrete(&inst, &model).is_err());
}

#[test]
fn gaussian_evidence_with_zero_coupling() {
    let inst = zero_instance(3, 5, vec![0.1, -0.3, 0.2], 4);
    let ev = gaussian_log_evidence(&inst, 0.5, 1.0).unwrap();
    let want: f64 = inst.y.iter().map(|y| -0.5 * y * y - 0.5 * (2.0 * PI).ln()).sum();
    assert!((ev.log_z - want).abs() < 1e-12);
}

#[test]
fn gaussian_evidence_two_by_two_by_hand() {
    let a = DMatrix::from_row_slice(2, 2, &[0.8, -0.3, 0.2, 1.1]);
    let inst = LinearModelInstance::from_parts(a.clone(), vec![1.0, 2.0], vec![0.5, -0.4], &[0.3, -0.2]).unwrap();
    let (nu, s0) = (0.6, 0.7);
    let v = s0 / (1.0 - nu * nu);
    // Φ = A·diag(1, √2); C = Φ Σ Φᵀ + I entrywise
    let phi = [[0.8, -0.3 * 2f64.sqrt()], [0.2, 1.1 * 2f64.sqrt()]];
    let sig = [[v, v * nu], [v * nu, v]];
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    c[i][j] += phi[i][k] * sig[k][l] * phi[j][l];
                }
            }
        }
        c[i][i] += 1.0;
    }
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let (y0, y1) = (inst.y[0], inst.y[1]);
    let quad = (c[1][1] * y0 * y0 - 2.0 * c[0][1] * y0 * y1 + c[0][0] * y1 * y1) / det;
    let want = -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad;
    let got = gaussian_log_evidence(&inst, nu, s0).unwrap().log_z;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

// direct sum over a grid chain, without any pruning or recursion
fn brute_force_log_evidence(inst: &LinearModelInstance, states: &[f64], init: &[f64], p: &[Vec<f64>]) -> f64 {
    let k = states.len();
    let n = inst.n;
    let phi = inst.phi();
    let total = k.pow(n as u32);
    let mut terms = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for v in idx.iter_mut() {
            *v = c % k;
            c /= k;
        }
        let mut lp = init[idx[0]].ln();
        for w in idx.windows(2) {
            lp += p[w[0]][w[1]].ln();
        }
        let mut rss = 0.0;
        for i in 0..inst.m {
            let mut r = inst.y[i];
            for j in 0..n {
                r -= phi[(i, j)] * states[idx[j]];
            }
            rss += r * r;
        }
        terms.push(lp - 0.5 * rss);
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln() - 0.5 * inst.m as f64 * (2.0 * PI).ln()
}

fn discretized_gauss_markov(nu: f64, points: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    // Gauss–Hermite nodes of the stationary law, via the Golub–Welsch eigenproblem
    let j = DMatrix::from_fn(points, points, |a, b| if a + 1 == b || b + 1 == a { (a.max(b) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = j.symmetric_eigen();
    let sd = (1.0 / (1.0 - nu * nu)).sqrt();
    let mut nodes: Vec<(f64, f64)> =
        (0..points).map(|i| (eig.eigenvalues[i] * 2f64.sqrt() * sd, eig.eigenvectors[(0, i)].powi(2))).collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let ws: Vec<f64> = nodes.iter().map(|n| n.1).collect();
    let dens = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
    let p = (0..points)
        .map(|a| {
            let row: Vec<f64> = (0..points).map(|b| ws[b] * dens(xs[b], nu * xs[a], 1.0) / dens(xs[b], 0.0, sd * sd)).collect();
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    (xs, ws, p)
}

#[test]
fn gaussian_evidence_matches_fine_discretization() {
    let nu = 0.5;
    let (xs, ws, p) = discretized_gauss_markov(nu, 15);
    let model = gauss(nu);
    // 15⁶ paths exceed the enumeration budget, so n = 6 goes through the direct sum
    let inst = sample_instance(&model, 6, 1.0, 12, 0).unwrap();
    let want = brute_force_log_evidence(&inst, &xs, &ws, &p);
    let got = gaussian_log_evidence(&inst, nu, 1.0).unwrap().log_z;
    assert!((got - want).abs() < 1e-2, "{got} vs {want}");
    // and at n = 4 through the library enumeration on the same grid chain
    let kernel = TransitionMatrix::with_states(xs.clone(), &p).unwrap();
    let grid = ModelSpec::matched(MarkovPrior::discrete_with_initial(kernel, ProbabilityVector::new(ws.clone()).unwrap()).unwrap(), unit());
    let inst = sample_instance(&model, 4, 1.0, 13, 0).unwrap();
    let enumerated = exact_log_evidence_discrete(&inst, &grid).unwrap().log_z;
    assert!((enumerated - brute_force_log_evidence(&inst, &xs, &ws, &p)).abs() < 1e-10);
    assert!((enumerated - gaussian_log_evidence(&inst, nu, 1.0).unwrap().log_z).abs() < 1e-2);
}

#[test]
fn deterministic_prior_free_energy() {
    let kernel = TransitionMatrix::with_states(vec![0.7], &[vec![1.0]]).unwrap();
    let model = ModelSpec::matched(MarkovPrior::discrete(kernel).unwrap(), unit());
    let (n, m) = (5, 9);
    let inst = zero_instance(n, m, vec![0.7; n], 21);
    let lz = log_evidence(&inst, &model).unwrap().log_z;
    let w2: f64 = inst.y.iter().map(|v| v * v).sum();
    let want = (w2 / 2.0 + m as f64 / 2.0 * (2.0 * PI).ln()) / n as f64;
    assert!((-lz / n as f64 - want).abs() < 1e-12);
}

#[test]
fn standard_error_shrinks_with_trials() {
    let model = binary(0.3, 0.3);
    let (_, se_small) = empirical_free_energy(&model, 8, 1.0, 50, 4).unwrap();
    let (_, se_large) = empirical_free_energy(&model, 8, 1.0, 200, 4).unwrap();
    let ratio = se_large / se_small;
    assert!((0.35..0.7).contains(&ratio), "{ratio}");
    assert_eq!(empirical_free_energy(&model, 8, 1.0, 30, 4).unwrap(), empirical_free_energy(&model, 8, 1.0, 30, 4).unwrap());
}

#[test]
fn mh_matches_enumeration_for_two_symbols() {
    let model = binary(0.2, 0.5);
    for index in 0..3 {
        let inst = sample_instance(&model, 2, 1.0, 31, index).unwrap();
        let (_, exact) = exact_posterior(&inst, &model).unwrap();
        let mh = mh_posterior_chain(&inst, &model, 100_000, 1_000, 5).unwrap();
        for j in 0..2 {
            let se = mh.posterior_mean_stderr[j];
            assert!((mh.posterior_mean[j] - exact[j]).abs() < 3.0 * se, "{j}: {} vs {} ± {se}", mh.posterior_mean[j], exact[j]);
        }
    }
}

#[test]
fn mh_with_zero_coupling_samples_the_prior() {
    let model = binary(0.2, 0.5);
    let inst = zero_instance(4, 4, vec![1.0; 4], 3);
    let mh = mh_posterior_chain(&inst, &model, 200_000, 1_000, 9).unwrap();
    let prior_mean = (-5.0 + 2.0) / 7.0;
    for j in 0..4 {
        assert!((mh.posterior_mean[j] - prior_mean).abs() < 3.0 * mh.posterior_mean_stderr[j]);
    }
}

#[test]
fn mh_detailed_balance_on_three_states() {
    // with Φ = 0 the index path does not depend on the symbol values,
    // so two relabelings recover the visit frequencies
    let target = [0.5, 0.3, 0.2];
    let run = |labels: Vec<f64>| {
        let kernel = TransitionMatrix::with_states(labels, &vec![target.to_vec(); 3]).unwrap();
        let prior = MarkovPrior::discrete_with_initial(kernel, ProbabilityVector::new(target.to_vec()).unwrap()).unwrap();
        let model = ModelSpec::matched(prior, unit());
        let inst = zero_instance(1, 1, vec![0.0], 1);
        let r = mh_posterior_chain(&inst, &model, 1_000_000, 1_000, 17).unwrap();
        (r.posterior_mean[0], r.posterior_mean_stderr[0])
    };
    let (m, se) = run(vec![0.0, 1.0, 2.0]);
    let (mp, sep) = run(vec![0.0, 2.0, 1.0]);
    // m = p₁ + 2p₂ and m′ = 2p₁ + p₂
    let p1 = (2.0 * mp - m) / 3.0;
    let p2 = (2.0 * m - mp) / 3.0;
    let err = (2.0 * sep + se) / 3.0;
    assert!((p1 - target[1]).abs() < 3.0 * err, "{p1}");
    assert!((p2 - target[2]).abs() < 3.0 * err, "{p2}");
}

#[test]
fn mh_gauss_markov_matches_conjugate_posterior() {
    let nu = 0.6;
    let model = gauss(nu);
    let inst = sample_instance(&model, 4, 1.0, 40, 0).unwrap();
    let v = 1.0 / (1.0 - nu * nu);
    let sigma_x = DMatrix::from_fn(4, 4, |i, j| v * nu.powi((i as i32 - j as i32).abs()));
    let phi = inst.phi();
    let precision = sigma_x.try_inverse().unwrap() + phi.transpose() * &phi;
    let mean = precision.try_inverse().unwrap() * phi.transpose() * DVector::from_column_slice(&inst.y);
    let mh = mh_posterior_chain(&inst, &model, 400_000, 5_000, 3).unwrap();
    assert!(mh.warnings.is_empty());
    let rate = mh.acceptance_rate;
    assert!((0.15..0.55).contains(&rate), "{rate}");
    for j in 0..4 {
        assert!((mh.posterior_mean[j] - mean[j]).abs() < 3.0 * mh.posterior_mean_stderr[j], "{j}");
    }
}

#[test]
fn hidden_priors_are_unsupported_for_exact_evidence() {
    let h = replica_core::markov_core::HiddenMarkovPrior::sparse(0.3, 0.5).unwrap();
    let model = ModelSpec::matched(Prior::Hidden(h), unit());
    let inst = sample_instance(&model, 5, 1.0, 1, 0).unwrap();
    assert!(log_evidence(&inst, &model).is_err());
    assert!(mh_posterior_chain(&inst, &model, 10, 1, 0).is_err());
}
