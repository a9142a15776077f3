//! Transition kernels, stationary laws and the hidden-Markov reduction.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::single_symbol::{Atom, ConditionalInputLaw};

/// Tolerance on row sums and on probability vector normalization.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Largest dimension solved directly; bigger chains use power iteration.
pub const DENSE_LIMIT: usize = 64;

/// A row-stochastic kernel over labelled states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    states: Vec<f64>,
    p: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Kernel with states labelled `0, 1, …`.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let labels = (0..rows.len()).map(|i| i as f64).collect();
        Self::with_states(labels, rows)
    }

    pub fn with_states(states: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Invalid("transition matrix has no rows".into()));
        }
        if states.len() != n {
            return Err(Error::Invalid(alloc::format!(
                "{} state labels for a {n}-row matrix",
                states.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Invalid(alloc::format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Invalid(alloc::format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if libm::fabs(sum - 1.0) > STOCHASTIC_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        let p = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(TransitionMatrix { states, p })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|j| self.p[(i, j)]).collect()
    }

    pub fn is_irreducible(&self) -> bool {
        is_irreducible(&self.p)
    }

    /// True when every row is identical, i.e. the chain is i.i.d.
    pub fn is_memoryless(&self) -> bool {
        let n = self.dim();
        (1..n).all(|i| (0..n).all(|j| self.p[(i, j)] == self.p[(0, j)]))
    }
}

/// Strong connectivity of the graph of nonzero entries.
pub fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if n != m.ncols() || n == 0 {
        return false;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let e = if forward { m[(i, j)] } else { m[(j, i)] };
                if e > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid("empty probability vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invalid("probability vector has a negative or non-finite entry".into()));
        }
        let sum: f64 = weights.iter().sum();
        if libm::fabs(sum - 1.0) > STOCHASTIC_TOL {
            return Err(Error::Invalid(alloc::format!("probability vector sums to {sum}")));
        }
        Ok(ProbabilityVector(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl core::ops::Index<usize> for ProbabilityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Left fixed point `vᵀP = vᵀ` with `‖v‖₁ = 1`.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<ProbabilityVector> {
    if !p.is_irreducible() {
        return Err(Error::Reducible);
    }
    let n = p.dim();
    let mut v = if n <= DENSE_LIMIT { dense_stationary(p.matrix())? } else { power_stationary(p.matrix()) };
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
    if v.iter().any(|x| *x <= 0.0) {
        return Err(Error::Numeric("stationary vector has a nonpositive entry".into()));
    }
    Ok(ProbabilityVector(v))
}

fn dense_stationary(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut v = lu.solve(&b).ok_or_else(|| Error::Numeric("singular stationary system".into()))?;
    // one step of iterative refinement
    let r = &b - &a * &v;
    if let Some(d) = lu.solve(&r) {
        v += d;
    }
    Ok(v.iter().copied().collect())
}

fn power_stationary(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let pt = p.transpose();
    for _ in 0..1_000_000 {
        // lazy chain, aperiodic even when P is periodic
        let next = (&pt * &v + &v) * 0.5;
        let delta = (&next - &v).amax();
        v = next;
        if delta < 1e-16 {
            break;
        }
    }
    v.iter().copied().collect()
}

/// Signal law driven by a finite chain or a first-order Gauss-Markov recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkovPrior {
    /// Finite alphabet given by the kernel's state labels.
    Discrete { kernel: TransitionMatrix, initial: ProbabilityVector },
    /// `X_{k+1} = ν X_k + N(0, σ0²)` started from its stationary law.
    GaussMarkov { nu: f64, innovation_variance: f64 },
}

impl MarkovPrior {
    /// Discrete chain started from its stationary distribution.
    pub fn discrete(kernel: TransitionMatrix) -> Result<Self> {
        let initial = stationary_distribution(&kernel)?;
        Ok(MarkovPrior::Discrete { kernel, initial })
    }

    pub fn discrete_with_initial(kernel: TransitionMatrix, initial: ProbabilityVector) -> Result<Self> {
        if initial.len() != kernel.dim() {
            return Err(Error::Invalid("initial distribution length differs from the kernel".into()));
        }
        if !kernel.is_irreducible() {
            return Err(Error::Reducible);
        }
        Ok(MarkovPrior::Discrete { kernel, initial })
    }

    /// Two-state chain on `{−1, +1}` with `P = [[1−α, α], [δ, 1−δ]]`.
    pub fn binary(alpha: f64, delta: f64) -> Result<Self> {
        let kernel =
            TransitionMatrix::with_states(vec![-1.0, 1.0], &[vec![1.0 - alpha, alpha], vec![delta, 1.0 - delta]])?;
        Self::discrete(kernel)
    }

    pub fn gauss_markov(nu: f64, innovation_variance: f64) -> Result<Self> {
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::Invalid(alloc::format!("correlation {nu} outside (0, 1)")));
        }
        if !(innovation_variance > 0.0 && innovation_variance.is_finite()) {
            return Err(Error::Invalid("innovation variance must be positive".into()));
        }
        Ok(MarkovPrior::GaussMarkov { nu, innovation_variance })
    }

    /// Variance of the stationary marginal of a Gauss-Markov prior.
    pub fn stationary_variance(&self) -> Option<f64> {
        match self {
            MarkovPrior::GaussMarkov { nu, innovation_variance } => Some(innovation_variance / (1.0 - nu * nu)),
            MarkovPrior::Discrete { .. } => None,
        }
    }
}

/// Hidden chain with a per-state emission law.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMarkovPrior {
    pub hidden: TransitionMatrix,
    pub emissions: Vec<ConditionalInputLaw>,
    pub initial: ProbabilityVector,
}

impl HiddenMarkovPrior {
    pub fn new(hidden: TransitionMatrix, emissions: Vec<ConditionalInputLaw>) -> Result<Self> {
        if emissions.len() != hidden.dim() {
            return Err(Error::Invalid(alloc::format!(
                "{} emission laws for {} hidden states",
                emissions.len(),
                hidden.dim()
            )));
        }
        let initial = stationary_distribution(&hidden)?;
        Ok(HiddenMarkovPrior { hidden, emissions, initial })
    }

    /// Sparsity pattern driven by a two-state chain with activity rate `κ`:
    /// inactive states emit `0`, active states emit `N(0, 1)`.
    pub fn sparse(kappa: f64, gamma: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::Invalid(alloc::format!("activity rate {kappa} outside (0, 1)")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Invalid(alloc::format!("gamma {gamma} outside (0, 1]")));
        }
        let hidden = TransitionMatrix::new(&[
            vec![1.0 - kappa * gamma, kappa * gamma],
            vec![(1.0 - kappa) * gamma, 1.0 - (1.0 - kappa) * gamma],
        ])?;
        let emissions = vec![ConditionalInputLaw::point_mass(0.0), ConditionalInputLaw::gaussian(0.0, 1.0)?];
        Self::new(hidden, emissions)
    }
}

/// The hidden-Markov prior viewed as a chain whose effective states are the hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct JointChain {
    pub weights: ProbabilityVector,
    /// Law of the next emission given the current hidden state.
    pub laws: Vec<ConditionalInputLaw>,
}

pub fn joint_chain(h: &HiddenMarkovPrior) -> Result<JointChain> {
    let weights = stationary_distribution(&h.hidden)?;
    let k = h.hidden.dim();
    let mut laws = Vec::with_capacity(k);
    for u0 in 0..k {
        let mut parts: Vec<(f64, Atom)> = Vec::new();
        for u1 in 0..k {
            let p = h.hidden.get(u0, u1);
            if p == 0.0 {
                continue;
            }
            for &(w, atom) in h.emissions[u1].components() {
                parts.push((p * w, atom));
            }
        }
        laws.push(ConditionalInputLaw::merged(parts)?);
    }
    Ok(JointChain { weights, laws })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_stationary_closed_form() {
        let p = MarkovPrior::binary(0.2, 0.5).unwrap();
        let MarkovPrior::Discrete { initial, .. } = p else { unreachable!() };
        assert!((initial[0] - 5.0 / 7.0).abs() < 1e-15);
        assert!((initial[1] - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let p = TransitionMatrix::new(&[vec![0.2, 0.3, 0.5], vec![0.5, 0.2, 0.3], vec![0.3, 0.5, 0.2]]).unwrap();
        let v = stationary_distribution(&p).unwrap();
        for i in 0..3 {
            assert!((v[i] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn irreducibility_examples() {
        let a = TransitionMatrix::new(&[vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        assert!(a.is_irreducible());
        let d = TransitionMatrix::new(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(!d.is_irreducible());
        assert_eq!(stationary_distribution(&d), Err(Error::Reducible));
        let mut cyc = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            cyc[i][(i + 1) % 4] = 1.0;
        }
        let c = TransitionMatrix::new(&cyc).unwrap();
        assert!(c.is_irreducible());
        let v = stationary_distribution(&c).unwrap();
        assert!(v.as_slice().iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            TransitionMatrix::new(&[vec![0.5, 0.6], vec![0.5, 0.5]]),
            Err(Error::NotStochastic { row: 0, .. })
        ));
        assert!(TransitionMatrix::new(&[vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(&[vec![1.0], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn large_chain_uses_power_iteration() {
        let n = 80;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 0.5;
                r[(i + 1) % n] = 0.3;
                r[(i + n - 1) % n] = 0.2;
                r
            })
            .collect();
        let p = TransitionMatrix::new(&rows).unwrap();
        let v = stationary_distribution(&p).unwrap();
        // doubly stochastic, so uniform
        for i in 0..n {
            assert!((v[i] - 1.0 / n as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn sparse_hmm_reduction() {
        let h = HiddenMarkovPrior::sparse(0.3, 0.8).unwrap();
        let jc = joint_chain(&h).unwrap();
        assert!((jc.weights[0] - 0.7).abs() < 1e-14);
        assert!((jc.weights[1] - 0.3).abs() < 1e-14);
        let c = jc.laws[0].components();
        assert_eq!(c.len(), 2);
        assert!((c[0].0 - 0.76).abs() < 1e-14);
        assert_eq!(c[0].1, Atom::PointMass(0.0));
        assert!((c[1].0 - 0.24).abs() < 1e-14);
        assert_eq!(c[1].1, Atom::Gaussian { mean: 0.0, variance: 1.0 });
    }

    #[test]
    fn deterministic_emission_recovers_hidden_chain() {
        let hidden = TransitionMatrix::new(&[vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6], vec![0.5, 0.0, 0.5]]).unwrap();
        let em = (0..3).map(|i| ConditionalInputLaw::point_mass(i as f64)).collect();
        let h = HiddenMarkovPrior::new(hidden.clone(), em).unwrap();
        let jc = joint_chain(&h).unwrap();
        assert_eq!(jc.weights, stationary_distribution(&hidden).unwrap());
        for u0 in 0..3 {
            for &(w, atom) in jc.laws[u0].components() {
                let Atom::PointMass(x) = atom else { panic!() };
                assert_eq!(w, hidden.get(u0, x as usize));
            }
        }
    }
}
