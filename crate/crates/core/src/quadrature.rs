//! Gauss–Hermite rules for expectations under a standard normal weight.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use once_cell::race::OnceBox;

use crate::error::{Error, Result};

/// Gauss–Hermite node counts tried first by [`adaptive`].
pub const HERMITE_LEVELS: [usize; 4] = [64, 128, 256, 512];

/// Trapezoid node counts used when the Hermite rules have not settled.
pub const TRAPEZOID_LEVELS: [usize; 3] = [1025, 2049, 4097];

/// Total number of refinement levels.
pub const LEVELS: usize = HERMITE_LEVELS.len() + TRAPEZOID_LEVELS.len();

// Half-width of the trapezoid range in standard deviations.
const TRAPEZOID_HALF_WIDTH: f64 = 14.0;

/// Absolute agreement required between successive refinements.
pub const TOLERANCE: f64 = 1e-9;

/// A rule approximating `E[f(Z)]` for `Z ~ N(0, 1)` by `Σ wᵢ f(zᵢ)`.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Builds an `n`-point rule with Newton iteration on the normalized Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let (x, w) = physicists(n);
        let norm = 1.0 / libm::sqrt(PI);
        Rule {
            nodes: x.iter().map(|v| v * SQRT_2).collect(),
            weights: w.iter().map(|v| v * norm).collect(),
        }
    }

    /// Equally spaced rule on `[−L, L]` with the normal density folded into the weights.
    ///
    /// Converges geometrically for integrands analytic in a strip, which covers
    /// the steep logistic shapes where Hermite rules are slow.
    pub fn trapezoid(n: usize, half_width: f64) -> Self {
        assert!(n >= 3, "trapezoid rule needs at least three nodes");
        let h = 2.0 * half_width / (n - 1) as f64;
        let norm = 1.0 / libm::sqrt(2.0 * PI);
        let nodes: Vec<f64> = (0..n).map(|i| -half_width + h * i as f64).collect();
        let weights = nodes
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let end = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                end * h * norm * libm::exp(-0.5 * z * z)
            })
            .collect();
        Rule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ wᵢ f(zᵢ)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(z, w)| w * f(*z))
            .sum()
    }
}

// Nodes and weights for the weight e^{-x²}: eigenvalues of the Jacobi matrix,
// then a Newton polish on the normalized recurrence, which also gives the weights.
fn physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            libm::sqrt(i.max(j) as f64 / 2.0)
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = guesses[i];
        let mut eval = hermite(n, z);
        for _ in 0..3 {
            let step = eval.0 / eval.1;
            z -= step;
            eval = hermite(n, z);
            if libm::fabs(step) <= 1e-15 * libm::fmax(1.0, libm::fabs(z)) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        // eval.2 is the log of the scale carried by the recurrence
        w[i] = libm::exp(libm::log(2.0) - 2.0 * (libm::log(libm::fabs(eval.1)) + eval.2));
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

// Orthonormal Hermite value and derivative at z, both divided by e^{scale}.
fn hermite(n: usize, z: f64) -> (f64, f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut p1 = PIM4;
    let mut p2 = 0.0;
    let mut scale = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * libm::sqrt(2.0 / jf) * p2 - libm::sqrt((jf - 1.0) / jf) * p3;
        if libm::fabs(p1) > 1e150 {
            p1 *= 1e-150;
            p2 *= 1e-150;
            scale += 150.0 * core::f64::consts::LN_10;
        }
    }
    (p1, libm::sqrt(2.0 * n as f64) * p2, scale)
}

static RULES: [OnceBox<Rule>; LEVELS] =
    [OnceBox::new(), OnceBox::new(), OnceBox::new(), OnceBox::new(), OnceBox::new(), OnceBox::new(), OnceBox::new()];

/// Shared rule for refinement `level`, built on first use.
pub fn cached(level: usize) -> &'static Rule {
    RULES[level].get_or_init(|| {
        let h = HERMITE_LEVELS.len();
        Box::new(if level < h {
            Rule::new(HERMITE_LEVELS[level])
        } else {
            Rule::trapezoid(TRAPEZOID_LEVELS[level - h], TRAPEZOID_HALF_WIDTH)
        })
    })
}

/// Evaluates `estimate` on successively finer rules until two agree within [`TOLERANCE`].
pub fn adaptive<F: FnMut(&Rule) -> f64>(mut estimate: F) -> Result<f64> {
    let mut previous = estimate(cached(0));
    for level in 1..LEVELS {
        let next = estimate(cached(level));
        if libm::fabs(next - previous) < TOLERANCE {
            return Ok(next);
        }
        if !next.is_finite() || level == LEVELS - 1 {
            return Err(Error::Quadrature { previous, last: next, nodes: cached(level).len() });
        }
        previous = next;
    }
    unreachable!()
}
