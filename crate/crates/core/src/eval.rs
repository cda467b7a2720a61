//! Policy evaluation on the augmented chain.
//!
//! Discounted values solve `(I - γP) V = r`, where `r(s) = Σ_s' P(s'|s) R(s, s')`
//! is the expected one-step reward. The average reward (gain) of an
//! irreducible chain is `w · r` with `w` the stationary distribution; it is
//! also the common limit of `(1/n) Σ_{i=0}^{n} γ^i P^i r` as `γ → 1⁻` and
//! `n → ∞`, which [`cesaro_gain`] approximates.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CamdpError, Result};
use crate::markov::{ensure_stochastic, is_irreducible};
use crate::model::FactoredCaMDP;
use crate::policy::JointPolicy;

/// Residual bound the direct solver must meet.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct InducedChain {
    pub p: DMatrix<f64>,
    pub r: DVector<f64>,
    pub policy: Option<JointPolicy>,
}

impl InducedChain {
    /// A chain not tied to any model, e.g. for randomized checks.
    pub fn from_parts(p: DMatrix<f64>, r: DVector<f64>) -> Result<Self> {
        ensure_stochastic(&p)?;
        if r.len() != p.nrows() {
            return Err(CamdpError::InvalidArgument(format!(
                "reward vector has {} entries for {} states",
                r.len(),
                p.nrows()
            )));
        }
        Ok(InducedChain { p, r, policy: None })
    }

    pub fn n_states(&self) -> usize {
        self.r.len()
    }
}

/// Builds the augmented transition matrix and expected rewards under `policy`.
pub fn induced_chain(model: &FactoredCaMDP, policy: &JointPolicy) -> Result<InducedChain> {
    let dims = model.dims();
    for pi in [&policy.pi0, &policy.pi1] {
        let want = pi.domain().len(&dims, pi.agent());
        if pi.len() != want {
            return Err(CamdpError::PolicyShapeMismatch(format!(
                "agent {} policy has {} entries, model needs {want}",
                pi.agent().index(),
                pi.len()
            )));
        }
    }
    let n = dims.n_states();
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in dims.states() {
        let (a0, a1) = policy.actions_at(&dims, s);
        let (row, reward) = model.transition_row(s, a0, a1);
        for (j, x) in row.into_iter().enumerate() {
            p[(s.flat_index, j)] = x;
        }
        r[s.flat_index] = reward;
    }
    Ok(InducedChain {
        p,
        r,
        policy: Some(policy.clone()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EvalMethod {
    Direct,
    Iterative,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub values: DVector<f64>,
    /// Average reward per step; `None` when the chain is reducible.
    pub gain: Option<f64>,
    pub gamma: f64,
    pub method: EvalMethod,
    pub iterations: usize,
    /// `‖(I - γP)V - r‖∞` for the returned values.
    pub residual: f64,
}

impl EvalResult {
    /// `Σ_s w(s) V(s)` under weights `w`.
    pub fn weighted_mean(&self, weights: &DVector<f64>) -> f64 {
        weights.dot(&self.values)
    }

    pub fn max_value(&self) -> f64 {
        self.values.max()
    }

    /// `(max V - min V) / mean V`.
    pub fn relative_spread(&self) -> f64 {
        (self.values.max() - self.values.min()) / self.values.mean()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(CamdpError::InvalidArgument(format!(
            "discount {gamma} is outside (0, 1)"
        )))
    }
}

fn bellman_residual(chain: &InducedChain, gamma: f64, v: &DVector<f64>) -> f64 {
    (v - gamma * (&chain.p * v) - &chain.r).amax()
}

fn optional_gain(chain: &InducedChain) -> Option<f64> {
    gain(chain).ok()
}

/// Solves `(I - γP) V = r` with a dense LU factorization.
pub fn evaluate_direct(chain: &InducedChain, gamma: f64) -> Result<EvalResult> {
    check_gamma(gamma)?;
    let n = chain.n_states();
    let a = DMatrix::identity(n, n) - gamma * &chain.p;
    let values = a.lu().solve(&chain.r).ok_or(CamdpError::SingularSystem)?;
    let residual = bellman_residual(chain, gamma, &values);
    if !residual.is_finite() || residual >= DIRECT_RESIDUAL_TOL {
        return Err(CamdpError::SingularSystem);
    }
    Ok(EvalResult {
        values,
        gain: optional_gain(chain),
        gamma,
        method: EvalMethod::Direct,
        iterations: 1,
        residual,
    })
}

/// Fixed-point iteration `V ← r + γPV` from `V = 0` until `‖ΔV‖∞ < tol`.
pub fn evaluate_iterative(
    chain: &InducedChain,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<EvalResult> {
    check_gamma(gamma)?;
    if !(tol > 0.0) {
        return Err(CamdpError::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let mut v = DVector::zeros(chain.n_states());
    let mut delta = f64::INFINITY;
    for k in 1..=max_iters {
        let next = &chain.r + gamma * (&chain.p * &v);
        delta = (&next - &v).amax();
        v = next;
        if delta < tol {
            let residual = bellman_residual(chain, gamma, &v);
            return Ok(EvalResult {
                values: v,
                gain: optional_gain(chain),
                gamma,
                method: EvalMethod::Iterative,
                iterations: k,
                residual,
            });
        }
    }
    Err(CamdpError::MaxItersExceeded {
        iters: max_iters,
        residual: delta,
    })
}

/// Unique `w ≥ 0` with `wP = w` and `Σw = 1`, from the balance equations
/// with the last one replaced by the normalization constraint.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    ensure_stochastic(p)?;
    if !is_irreducible(p) {
        return Err(CamdpError::Reducible);
    }
    let n = p.nrows();
    let mut a = (DMatrix::identity(n, n) - p).transpose();
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let w = a.lu().solve(&b).ok_or(CamdpError::SingularSystem)?;
    // Round-off can leave tiny negative entries.
    let w = w.map(|x| x.max(0.0));
    let total = w.sum();
    Ok(w / total)
}

/// Long-run average reward `w · r`.
pub fn gain(chain: &InducedChain) -> Result<f64> {
    let w = stationary_distribution(&chain.p)?;
    Ok(w.dot(&chain.r))
}

/// `(1/n) Σ_{i=0}^{n} γ^i P^i`.
pub fn cesaro_matrix(p: &DMatrix<f64>, gamma: f64, n: usize) -> DMatrix<f64> {
    assert!(n >= 1, "cesaro average needs n >= 1");
    let size = p.nrows();
    let mut term = DMatrix::identity(size, size);
    let mut acc = term.clone();
    for _ in 0..n {
        term = gamma * (&term * p);
        acc += &term;
    }
    acc / n as f64
}

/// `(1/n) Σ_{i=0}^{n} γ^i P^i r`, computed with matrix-vector products.
pub fn cesaro_gain(chain: &InducedChain, gamma: f64, n: usize) -> DVector<f64> {
    assert!(n >= 1, "cesaro average needs n >= 1");
    let mut term = chain.r.clone();
    let mut acc = term.clone();
    for _ in 0..n {
        term = gamma * (&chain.p * &term);
        acc += &term;
    }
    acc / n as f64
}

/// Per-column `max - min` of a matrix.
pub fn column_spread(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.max() - c.min()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RewardMode;

    fn chain(p: &[f64], r: &[f64]) -> InducedChain {
        let n = r.len();
        InducedChain::from_parts(DMatrix::from_row_slice(n, n, p), DVector::from_row_slice(r))
            .unwrap()
    }

    #[test]
    fn single_state_geometric_series() {
        let c = chain(&[1.0], &[1.0]);
        let d = evaluate_direct(&c, 0.5).unwrap();
        assert!((d.values[0] - 2.0).abs() < 1e-12);
        let it = evaluate_iterative(&c, 0.5, 1e-12, 1000).unwrap();
        assert!((it.values[0] - 2.0).abs() < 1e-11);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let c = chain(&[0.3, 0.7, 0.9, 0.1], &[0.0, 0.0]);
        assert_eq!(evaluate_direct(&c, 0.9).unwrap().values.amax(), 0.0);
    }

    #[test]
    fn iteration_count_respects_contraction_bound() {
        let c = chain(&[0.3, 0.7, 0.9, 0.1], &[1.0, 0.25]);
        let (gamma, tol) = (0.98_f64, 1e-12);
        let bound = ((tol * (1.0 - gamma) / c.r.amax()).ln() / gamma.ln()).ceil() as usize;
        let res = evaluate_iterative(&c, gamma, tol, 100_000).unwrap();
        assert!(res.iterations <= bound, "{} > {bound}", res.iterations);
    }

    #[test]
    fn iterative_reports_max_iters() {
        let c = chain(&[0.3, 0.7, 0.9, 0.1], &[1.0, 0.25]);
        assert!(matches!(
            evaluate_iterative(&c, 0.99, 1e-12, 5),
            Err(CamdpError::MaxItersExceeded { iters: 5, .. })
        ));
    }

    #[test]
    fn bad_gamma_rejected() {
        let c = chain(&[1.0], &[1.0]);
        assert!(evaluate_direct(&c, 1.0).is_err());
        assert!(evaluate_iterative(&c, 0.0, 1e-9, 10).is_err());
    }

    #[test]
    fn stationary_of_symmetric_chains() {
        let w = stationary_distribution(&DMatrix::from_element(2, 2, 0.5)).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let w = stationary_distribution(&swap).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!(matches!(
            stationary_distribution(&DMatrix::identity(2, 2)),
            Err(CamdpError::Reducible)
        ));
    }

    #[test]
    fn stationary_of_example_p0_matches_closed_form() {
        // For [[1-a, a], [b, 1-b]] the stationary law is (b, a) / (a + b).
        let m = FactoredCaMDP::builtin_example();
        let p = DMatrix::from_fn(2, 2, |i, j| m.p0[0][i][j]);
        let (a, b) = (p[(0, 1)], p[(1, 0)]);
        let w = stationary_distribution(&p).unwrap();
        assert!((w[0] - b / (a + b)).abs() < 1e-12);
        assert!((w[1] - a / (a + b)).abs() < 1e-12);
        assert!((w.transpose() * &p - w.transpose()).amax() < 1e-10);
        // Power iteration on the two-step chain lands on the same vector.
        let p2 = &p * &p;
        let mut x = DVector::from_row_slice(&[1.0, 0.0]).transpose();
        for _ in 0..200 {
            x = &x * &p2;
        }
        assert!((x.transpose() - w).amax() < 1e-12);
    }

    #[test]
    fn gain_examples() {
        let swap = chain(&[0.0, 1.0, 1.0, 0.0], &[0.0, 1.0]);
        assert!((gain(&swap).unwrap() - 0.5).abs() < 1e-15);
        let uniform = chain(&[1.0 / 3.0; 9], &[0.7, 0.7, 0.7]);
        assert!((gain(&uniform).unwrap() - 0.7).abs() < 1e-15);
        let reducible = chain(&[1.0, 0.0, 0.0, 1.0], &[0.0, 1.0]);
        assert!(matches!(gain(&reducible), Err(CamdpError::Reducible)));
    }

    #[test]
    fn cesaro_small_cases() {
        let c = chain(&[0.3, 0.7, 0.9, 0.1], &[1.0, 0.25]);
        let g = 0.8;
        let direct = &c.r + g * (&c.p * &c.r);
        assert!((cesaro_gain(&c, g, 1) - direct).amax() < 1e-15);

        let k = chain(&[0.3, 0.7, 0.9, 0.1], &[2.0, 2.0]);
        let n = 7;
        let scale: f64 = (0..=n).map(|i| g.powi(i as i32)).sum::<f64>() / n as f64;
        assert!((cesaro_gain(&k, g, n) - DVector::from_element(2, scale * 2.0)).amax() < 1e-14);
    }

    #[test]
    fn singleton_model_chain() {
        let mut m = FactoredCaMDP::builtin_example();
        m.n0 = 1;
        m.ns = 1;
        m.n1 = 1;
        m.m0 = 1;
        m.m1 = 1;
        m.p0 = vec![vec![vec![1.0]]];
        m.ps = vec![vec![vec![vec![1.0]]]];
        m.p1 = vec![vec![vec![1.0]]];
        m.r0 = vec![vec![vec![0.5]]];
        m.rs = vec![vec![vec![vec![0.4]]]];
        m.r1 = vec![vec![vec![3.0]]];
        let m = m.validated().unwrap();
        let d = m.dims();
        let jp = JointPolicy::parse(&d, "0:0").unwrap();
        let c = induced_chain(&m, &jp).unwrap();
        assert_eq!(c.p, DMatrix::from_element(1, 1, 1.0));
        assert!((c.r[0] - 0.5 * 0.4 * 3.0).abs() < 1e-15);
        let c = induced_chain(&m.with_reward_mode(RewardMode::Sum), &jp).unwrap();
        assert!((c.r[0] - 3.9).abs() < 1e-15);
    }

    #[test]
    fn example_chain_entry_and_rows() {
        let m = FactoredCaMDP::builtin_example();
        let jp = JointPolicy::parse(&m.dims(), "0000:1100").unwrap();
        let c = induced_chain(&m, &jp).unwrap();
        // State (s0=0, ss=0, s1=0): a0 = 0, a1 = pi1[(s1=0, ss=0)] = 1.
        assert!((c.p[(0, 0)] - 0.8229 * 0.1838 * 0.4083).abs() < 1e-15);
        assert!((c.p[(0, 0)] - 0.061755).abs() < 5e-7);
        for row in c.p.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let m = FactoredCaMDP::builtin_example();
        let small = crate::model::Dims { n0: 1, ns: 2, n1: 2, m0: 2, m1: 2 };
        let jp = JointPolicy::parse(&small, "00:1100").unwrap();
        assert!(matches!(
            induced_chain(&m, &jp),
            Err(CamdpError::PolicyShapeMismatch(_))
        ));
    }
}
