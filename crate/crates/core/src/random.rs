//! Seeded random instances for property suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{FactoredCaMDP, RewardMode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-stochastic matrix with entries bounded away from zero, hence ergodic.
pub fn ergodic_rows<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = row.iter().sum();
            row.into_iter().map(|x| x / sum).collect()
        })
        .collect()
}

pub fn ergodic_matrix<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let rows = ergodic_rows(rng, n);
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn rewards<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect()
}

/// Random model with the given sizes and strictly positive transition rows.
pub fn random_model<R: Rng>(
    rng: &mut R,
    n0: usize,
    ns: usize,
    n1: usize,
    m0: usize,
    m1: usize,
    gamma: f64,
    reward_mode: RewardMode,
) -> FactoredCaMDP {
    FactoredCaMDP {
        n0,
        ns,
        n1,
        m0,
        m1,
        gamma,
        reward_mode,
        p0: (0..m0).map(|_| ergodic_rows(rng, n0)).collect(),
        ps: (0..m0)
            .map(|_| (0..m1).map(|_| ergodic_rows(rng, ns)).collect())
            .collect(),
        p1: (0..m1).map(|_| ergodic_rows(rng, n1)).collect(),
        r0: (0..m0).map(|_| rewards(rng, n0)).collect(),
        rs: (0..m0)
            .map(|_| (0..m1).map(|_| rewards(rng, ns)).collect())
            .collect(),
        r1: (0..m1).map(|_| rewards(rng, n1)).collect(),
    }
}

/// Random model with two states per component and two actions per agent,
/// the shape of the built-in example.
pub fn random_small_model<R: Rng>(rng: &mut R) -> FactoredCaMDP {
    let gamma = rng.gen_range(0.5..0.99);
    let mode = if rng.gen_bool(0.5) {
        RewardMode::Product
    } else {
        RewardMode::Sum
    };
    random_model(rng, 2, 2, 2, 2, 2, gamma, mode)
}

/// Random ergodic chain and reward vector of size `n`.
pub fn random_chain<R: Rng>(rng: &mut R, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let p = ergodic_matrix(rng, n);
    let r = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
    (p, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::check_ergodic;
    use crate::model::validate;

    #[test]
    fn generated_models_validate() {
        let mut r = rng(7);
        for _ in 0..20 {
            let m = random_small_model(&mut r);
            assert!(validate(&m).is_ok());
        }
    }

    #[test]
    fn generated_chains_are_ergodic() {
        let mut r = rng(11);
        for n in 1..6 {
            let (p, _) = random_chain(&mut r, n);
            assert!(check_ergodic(&p).unwrap().is_ergodic());
        }
    }

    #[test]
    fn same_seed_same_model() {
        let a = random_small_model(&mut rng(3));
        let b = random_small_model(&mut rng(3));
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}
