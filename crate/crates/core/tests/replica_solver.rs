use std::f64::consts::PI;

use replica_core::markov_core::{HiddenMarkovPrior, MarkovPrior};
use replica_core::replica_solver::*;
use replica_core::single_symbol::{conditional_mse, cross_entropy, ConditionalInputLaw, ScalarChannel};

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, k: usize) -> f64 {
    let h = (hi - lo) / (k - 1) as f64;
    (0..k).map(|i| if i == 0 || i == k - 1 { 0.5 } else { 1.0 } * f(lo + h * i as f64)).sum::<f64>() * h
}

fn normal(u: f64, m: f64, var: f64) -> f64 {
    (-(u - m).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

// 𝒢 for a binary channel, written out directly
fn binary_term(p_true: f64, p_post: f64, eta: f64, xi: f64, s: f64, beta: f64, sigma: f64) -> f64 {
    let rs = s.sqrt();
    let pt = |u: f64| (1.0 - p_true) * normal(u, -rs, 1.0 / eta) + p_true * normal(u, rs, 1.0 / eta);
    let q = |u: f64| (1.0 - p_post) * normal(u, -rs, 1.0 / xi) + p_post * normal(u, rs, 1.0 / xi);
    let ce = -trapezoid(|u| pt(u) * q(u).ln(), -25.0, 25.0, 100_001);
    let c = ((xi - 1.0) - xi.ln()) / (2.0 * beta) - 0.5 * (2.0 * PI / xi).ln() - xi / (2.0 * eta)
        + sigma * sigma * xi * (eta - xi) / (2.0 * beta * eta)
        + (2.0 * PI).ln() / (2.0 * beta)
        + xi / (2.0 * beta * eta);
    ce + c
}

#[test]
fn state_term_matches_trapezoid_oracle() {
    let truth = MarkovPrior::binary(0.3, 0.3).unwrap();
    let post = MarkovPrior::binary(0.2, 0.4).unwrap();
    let model = ModelSpec::new(truth, Some(post.into()), SnrLaw::fixed(1.0).unwrap(), 1.2).unwrap();
    let (eta, xi) = (0.7, 0.45);
    // state 0 is x₀ = −1: next symbol is +1 with probability α
    let got = free_energy_term(&model, 0, eta, xi, 1.0).unwrap();
    let want = binary_term(0.3, 0.2, eta, xi, 1.0, 1.0, 1.2);
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    let got = free_energy_term(&model, 1, eta, xi, 1.0).unwrap();
    let want = binary_term(0.7, 0.6, eta, xi, 1.0, 1.0, 1.2);
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn iid_chain_reduces_to_scalar_fixed_point() {
    // equal rows: an i.i.d. source with P(+1) = 0.3
    let model = ModelSpec::matched(MarkovPrior::binary(0.3, 0.7).unwrap(), SnrLaw::fixed(1.0).unwrap());
    let law = ConditionalInputLaw::two_point(-1.0, 1.0, 0.3).unwrap();
    for &beta in &[0.5, 1.0, 2.0] {
        let mut eta = 1.0;
        for _ in 0..5000 {
            let mse = conditional_mse(&ScalarChannel::matched(eta, 1.0, &law)).unwrap();
            eta = 0.5 * eta + 0.5 / (1.0 + beta * mse);
        }
        let f = cross_entropy(&ScalarChannel::matched(eta, 1.0, &law)).unwrap() + constants(eta, eta, beta, 1.0);
        let sol = free_energy(&model, beta).unwrap();
        assert!((sol.eta - eta).abs() < 1e-9);
        assert!((sol.free_energy - f).abs() < 1e-9);
    }
}

#[test]
fn gauss_markov_quadrature_matches_closed_form() {
    for &nu in &[0.1, 0.5, 0.8] {
        let model = ModelSpec::matched(MarkovPrior::gauss_markov(nu, 1.0).unwrap(), SnrLaw::fixed(1.0).unwrap());
        // closed form depends on the innovation variance only
        let a = 1.0;
        for i in 0..15 {
            let beta = 0.2 + 2.8 * i as f64 / 14.0;
            let sol = free_energy(&model, beta).unwrap();
            assert!((sol.eta - gauss_markov_eta(beta, a)).abs() < 1e-9);
            assert!((sol.free_energy - gauss_markov_free_energy(beta, a)).abs() < 1e-9);
        }
    }
}

#[test]
fn free_energy_at_unit_load_from_quadratic_formula() {
    // β = 1, a = 1: η = 2 / (1 + √5)
    let eta = gauss_markov_eta(1.0, 1.0);
    assert!((eta - 2.0 / (1.0 + 5f64.sqrt())).abs() < 1e-15);
    assert!((eta * eta + eta - 1.0).abs() < 1e-14);
}

// matched mmse for p₀ δ₀ + (1 − p₀) N(0, 1) at unit SNR
fn bernoulli_gauss_mmse(p0: f64, eta: f64) -> f64 {
    let v1 = 1.0 + 1.0 / eta;
    let f = |u: f64| {
        let a = p0 * normal(u, 0.0, 1.0 / eta);
        let b = (1.0 - p0) * normal(u, 0.0, v1);
        let m = b / (a + b) * u / v1;
        (a + b) * m * m
    };
    (1.0 - p0) - trapezoid(f, -40.0, 40.0, 80_001)
}

#[test]
fn sparse_hidden_chain_matches_hand_specialization() {
    for &(k, g, beta) in &[(0.3, 0.6, 0.5), (0.2, 1.0, 1.0), (0.5, 0.2, 2.0)] {
        let model = ModelSpec::matched(HiddenMarkovPrior::sparse(k, g).unwrap(), SnrLaw::fixed(1.0).unwrap());
        // hidden state 0 keeps the zero with 1 − κγ, state 1 with (1 − κ)γ; weights (1 − κ, κ)
        let (z0, z1) = (1.0 - k * g, (1.0 - k) * g);
        let mut eta = 1.0;
        for _ in 0..2000 {
            let e = (1.0 - k) * bernoulli_gauss_mmse(z0, eta) + k * bernoulli_gauss_mmse(z1, eta);
            eta = 0.5 * eta + 0.5 / (1.0 + beta * e);
        }
        let e = (1.0 - k) * bernoulli_gauss_mmse(z0, eta) + k * bernoulli_gauss_mmse(z1, eta);
        let sol = free_energy(&model, beta).unwrap();
        assert!((sol.mmse - e).abs() < 1e-7, "{} vs {e}", sol.mmse);
    }
}

#[test]
fn eta_decreases_with_load() {
    let model = ModelSpec::matched(MarkovPrior::binary(0.3, 0.3).unwrap(), SnrLaw::fixed(1.0).unwrap());
    let mut last = f64::INFINITY;
    for i in 1..=20 {
        let sol = free_energy(&model, 0.15 * i as f64).unwrap();
        assert!(sol.eta < last);
        assert!(sol.mmse_in_range);
        last = sol.eta;
    }
}

// E_λ[I(X₁; X₁ + N(0, 1) | X₀)] for a binary chain by direct quadrature
fn scalar_information(p_plus: &[(f64, f64)]) -> f64 {
    p_plus
        .iter()
        .map(|(w, p)| {
            let d = |u: f64| (1.0 - p) * normal(u, -1.0, 1.0) + p * normal(u, 1.0, 1.0);
            let h = -trapezoid(|u| d(u) * d(u).ln(), -20.0, 20.0, 40_001);
            w * (h - 0.5 * (2.0 * PI * std::f64::consts::E).ln())
        })
        .sum()
}

#[test]
fn mutual_information_decouples_at_small_load() {
    let model = ModelSpec::matched(MarkovPrior::binary(0.3, 0.3).unwrap(), SnrLaw::fixed(1.0).unwrap());
    let want = scalar_information(&[(0.5, 0.3), (0.5, 0.7)]);
    let c = mutual_information(&model, 0.01).unwrap();
    assert!((c - want).abs() < 0.02 * want, "{c} vs {want}");
    let sol = free_energy(&model, 1e-9).unwrap();
    assert!((sol.eta - 1.0).abs() < 1e-8);
}

#[test]
fn gaussian_iid_mutual_information() {
    // ν → 0: i.i.d. N(0, 1), where C = ½ ln(1 + η) + (η − 1 − ln η) / 2β
    let model = ModelSpec::matched(MarkovPrior::gauss_markov(1e-6, 1.0).unwrap(), SnrLaw::fixed(1.0).unwrap());
    for &beta in &[0.5, 1.0, 2.0] {
        let eta = gauss_markov_eta(beta, 1.0);
        let want = 0.5 * (1.0 + eta).ln() + ((eta - 1.0) - eta.ln()) / (2.0 * beta);
        let got = mutual_information(&model, beta).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn residuals_recheck_at_reported_points() {
    let truth = MarkovPrior::binary(0.3, 0.3).unwrap();
    let post = MarkovPrior::binary(0.25, 0.35).unwrap();
    let model = ModelSpec::new(truth, Some(post.into()), SnrLaw::new(vec![(0.5, 0.5), (2.0, 0.5)]).unwrap(), 0.9).unwrap();
    for p in solve_fixed_point(&model, 1.3).unwrap() {
        assert!(p.residual < RESIDUAL_TOL);
        assert!(p.eta > 0.0 && p.eta <= 1.0 && p.xi > 0.0);
    }
    assert!(mutual_information(&model, 1.3).is_err());
    let sol = free_energy(&model, 1.3).unwrap();
    assert!(sol.mutual_info.is_none());
    assert!(sol.mmse_in_range);
}
