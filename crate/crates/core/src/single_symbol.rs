//! The scalar Gaussian channel `U = √s·X₁ + W/√τ` with a known state.
//!
//! Every conditional input law is a finite mixture of point masses and
//! Gaussians, so output densities are exact Gaussian mixtures and all
//! expectations over `U` are taken per component with Gauss–Hermite rules.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{self, Rule};

/// One mixture component of a conditional input law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    PointMass(f64),
    Gaussian { mean: f64, variance: f64 },
}

impl Atom {
    pub fn mean(&self) -> f64 {
        match *self {
            Atom::PointMass(x) => x,
            Atom::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Atom::PointMass(_) => 0.0,
            Atom::Gaussian { variance, .. } => variance,
        }
    }
}

/// Finite mixture `Σ wᵢ·atomᵢ` describing `p(X₁ | state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalInputLaw {
    components: Vec<(f64, Atom)>,
}

impl ConditionalInputLaw {
    pub fn new(components: Vec<(f64, Atom)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("input law needs at least one component".into()));
        }
        let mut sum = 0.0;
        for (w, atom) in &components {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Invalid("mixture weight must be finite and nonnegative".into()));
            }
            match *atom {
                Atom::PointMass(x) if !x.is_finite() => {
                    return Err(Error::Invalid("point mass location must be finite".into()))
                }
                Atom::Gaussian { mean, variance } if !(mean.is_finite() && variance > 0.0 && variance.is_finite()) => {
                    return Err(Error::Invalid("gaussian component needs finite mean and positive variance".into()))
                }
                _ => {}
            }
            sum += w;
        }
        if libm::fabs(sum - 1.0) > 1e-12 {
            return Err(Error::Invalid(alloc::format!("mixture weights sum to {sum}")));
        }
        Ok(ConditionalInputLaw { components })
    }

    pub fn point_mass(x: f64) -> Self {
        ConditionalInputLaw { components: alloc::vec![(1.0, Atom::PointMass(x))] }
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::new(alloc::vec![(1.0, Atom::Gaussian { mean, variance })])
    }

    /// Two-point law on `{a, b}` with mass `p_b` on `b`.
    pub fn two_point(a: f64, b: f64, p_b: f64) -> Result<Self> {
        Self::new(alloc::vec![(1.0 - p_b, Atom::PointMass(a)), (p_b, Atom::PointMass(b))])
    }

    /// Like [`new`](Self::new) but sums weights of identical atoms and drops zero weights.
    pub fn merged(parts: Vec<(f64, Atom)>) -> Result<Self> {
        let mut out: Vec<(f64, Atom)> = Vec::new();
        for (w, atom) in parts {
            if w == 0.0 {
                continue;
            }
            match out.iter_mut().find(|(_, a)| *a == atom) {
                Some(slot) => slot.0 += w,
                None => out.push((w, atom)),
            }
        }
        Self::new(out)
    }

    pub fn components(&self) -> &[(f64, Atom)] {
        &self.components
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|(w, a)| w * a.mean()).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.components.iter().map(|(w, a)| w * (a.variance() + a.mean() * a.mean())).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m).max(0.0)
    }

    /// Location of the law when it is a single unit point mass.
    pub fn degenerate_at(&self) -> Option<f64> {
        let mut loc = None;
        for (w, a) in &self.components {
            if *w == 0.0 {
                continue;
            }
            match (a, loc) {
                (Atom::PointMass(x), None) => loc = Some(*x),
                (Atom::PointMass(x), Some(l)) if *x == l => {}
                _ => return None,
            }
        }
        loc
    }
}

/// Which noise level and law an output density refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// True law at inverse noise variance `η`.
    True,
    /// Postulated law at inverse noise variance `ξ`.
    Postulated,
}

/// Decoupled channel with state: true law at `η`, postulated law at `ξ`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarChannel<'a> {
    pub eta: f64,
    pub xi: f64,
    pub s: f64,
    pub true_law: &'a ConditionalInputLaw,
    pub postulated_law: &'a ConditionalInputLaw,
}

impl<'a> ScalarChannel<'a> {
    pub fn matched(eta: f64, s: f64, law: &'a ConditionalInputLaw) -> Self {
        ScalarChannel { eta, xi: eta, s, true_law: law, postulated_law: law }
    }

    fn check(&self) -> Result<()> {
        if self.eta > 0.0 && self.xi > 0.0 && self.s > 0.0 && self.eta.is_finite() && self.xi.is_finite() {
            Ok(())
        } else {
            Err(Error::Invalid("channel parameters must be positive and finite".into()))
        }
    }

    fn both_degenerate_at_same_point(&self) -> bool {
        matches!((self.true_law.degenerate_at(), self.postulated_law.degenerate_at()), (Some(a), Some(b)) if a == b)
    }
}

#[derive(Debug, Clone, Copy)]
struct Comp {
    logw: f64,
    center: f64,
    inv_var: f64,
    lognorm: f64,
    mean: f64,
    gain: f64,
    post_var: f64,
    sd: f64,
}

// A law pushed through the channel at noise precision `tau`.
#[derive(Debug, Clone)]
struct Prepared {
    comps: Vec<Comp>,
}

impl Prepared {
    fn new(law: &ConditionalInputLaw, s: f64, tau: f64) -> Self {
        let root_s = libm::sqrt(s);
        let comps = law
            .components()
            .iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|&(w, atom)| {
                let v = atom.variance();
                let var = 1.0 / tau + s * v;
                Comp {
                    logw: libm::log(w),
                    center: root_s * atom.mean(),
                    inv_var: 1.0 / var,
                    lognorm: -0.5 * libm::log(2.0 * PI * var),
                    mean: atom.mean(),
                    gain: root_s * v / var,
                    post_var: v / (tau * var),
                    sd: libm::sqrt(var),
                }
            })
            .collect();
        Prepared { comps }
    }

    #[inline]
    fn log_term(c: &Comp, u: f64) -> f64 {
        let d = u - c.center;
        c.logw + c.lognorm - 0.5 * d * d * c.inv_var
    }

    fn max_log(&self, u: f64) -> f64 {
        self.comps.iter().map(|c| Self::log_term(c, u)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn log_density(&self, u: f64) -> f64 {
        let mx = self.max_log(u);
        let s: f64 = self.comps.iter().map(|c| libm::exp(Self::log_term(c, u) - mx)).sum();
        mx + libm::log(s)
    }

    // (posterior mean, posterior variance) of X given U = u.
    fn posterior(&self, u: f64) -> (f64, f64) {
        if self.comps.len() == 1 {
            let c = &self.comps[0];
            return (c.mean + c.gain * (u - c.center), c.post_var);
        }
        let mx = self.max_log(u);
        let (mut z, mut m1) = (0.0, 0.0);
        for c in &self.comps {
            let r = libm::exp(Self::log_term(c, u) - mx);
            z += r;
            m1 += r * (c.mean + c.gain * (u - c.center));
        }
        let mean = m1 / z;
        // spread about the mean, written so it stays nonnegative
        let mut var = 0.0;
        for c in &self.comps {
            let r = libm::exp(Self::log_term(c, u) - mx) / z;
            let mu = c.mean + c.gain * (u - c.center);
            var += r * (c.post_var + (mu - mean) * (mu - mean));
        }
        (mean, var)
    }
}

/// Density of `U` at `u`.
pub fn output_density(ch: &ScalarChannel<'_>, u: f64, which: Noise) -> f64 {
    libm::exp(log_output_density(ch, u, which))
}

pub fn log_output_density(ch: &ScalarChannel<'_>, u: f64, which: Noise) -> f64 {
    let p = match which {
        Noise::True => Prepared::new(ch.true_law, ch.s, ch.eta),
        Noise::Postulated => Prepared::new(ch.postulated_law, ch.s, ch.xi),
    };
    p.log_density(u)
}

/// Generalized posterior mean `⟨X | x₀⟩_q(u)` under the postulated law and `ξ`.
pub fn posterior_mean(ch: &ScalarChannel<'_>, u: f64) -> f64 {
    Prepared::new(ch.postulated_law, ch.s, ch.xi).posterior(u).0
}

/// Expectation over the true output law of `K` functionals evaluated together.
///
/// `f(u, truth_mean, truth_var)` receives the true posterior moments of `X₁`
/// given the component and `u`.
fn integrate<const K: usize, F>(ch: &ScalarChannel<'_>, mut f: F) -> Result<[f64; K]>
where
    F: FnMut(f64, f64, f64) -> [f64; K],
{
    ch.check()?;
    let truth = Prepared::new(ch.true_law, ch.s, ch.eta);
    let mut run = |rule: &Rule| {
        let mut acc = [0.0; K];
        for c in &truth.comps {
            let w = libm::exp(c.logw);
            for (z, wz) in rule.nodes.iter().zip(&rule.weights) {
                if *wz == 0.0 {
                    continue;
                }
                let u = c.center + c.sd * z;
                let tm = c.mean + c.gain * (u - c.center);
                let vals = f(u, tm, c.post_var);
                for k in 0..K {
                    acc[k] += w * wz * vals[k];
                }
            }
        }
        acc
    };
    let mut prev = run(quadrature::cached(0));
    for level in 1..quadrature::LEVELS {
        let next = run(quadrature::cached(level));
        let worst = (0..K)
            .map(|k| libm::fabs(next[k] - prev[k]))
            .fold(0.0, f64::max);
        if worst < quadrature::TOLERANCE {
            return Ok(next);
        }
        if level == quadrature::LEVELS - 1 || next.iter().any(|v| !v.is_finite()) {
            let k = (0..K)
                .max_by(|&a, &b| {
                    libm::fabs(next[a] - prev[a]).partial_cmp(&libm::fabs(next[b] - prev[b])).unwrap_or(core::cmp::Ordering::Equal)
                })
                .unwrap_or(0);
            return Err(Error::Quadrature { previous: prev[k], last: next[k], nodes: quadrature::cached(level).len() });
        }
        prev = next;
    }
    unreachable!()
}

/// Conditional mean-square error `E[(X₁ − ⟨X | x₀⟩_q)²]` of the generalized posterior mean.
pub fn conditional_mse(ch: &ScalarChannel<'_>) -> Result<f64> {
    Ok(moments(ch)?.mse)
}

/// Retrochannel variance `E_U[Var_q(X | U, x₀)]`.
pub fn conditional_var(ch: &ScalarChannel<'_>) -> Result<f64> {
    Ok(moments(ch)?.var)
}

/// Both error moments of a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mse: f64,
    pub var: f64,
}

pub fn moments(ch: &ScalarChannel<'_>) -> Result<Moments> {
    if ch.both_degenerate_at_same_point() {
        ch.check()?;
        return Ok(Moments { mse: 0.0, var: 0.0 });
    }
    let q = Prepared::new(ch.postulated_law, ch.s, ch.xi);
    let [mse, var] = integrate(ch, |u, tm, tv| {
        let (pm, pv) = q.posterior(u);
        let d = tm - pm;
        [tv + d * d, pv]
    })?;
    Ok(Moments { mse, var })
}

/// Cross entropy `−E_p[log q_ξ(U)]` of the postulated output density under the true one.
pub fn cross_entropy(ch: &ScalarChannel<'_>) -> Result<f64> {
    let q = Prepared::new(ch.postulated_law, ch.s, ch.xi);
    let [h] = integrate(ch, |u, _, _| [-q.log_density(u)])?;
    Ok(h)
}

/// `E_p[⟨X | x₀⟩_q(U)²]`.
pub fn posterior_mean_second_moment(ch: &ScalarChannel<'_>) -> Result<f64> {
    let q = Prepared::new(ch.postulated_law, ch.s, ch.xi);
    let [m] = integrate(ch, |u, _, _| {
        let pm = q.posterior(u).0;
        [pm * pm]
    })?;
    Ok(m)
}
