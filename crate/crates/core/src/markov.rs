//! Structural classification of finite Markov chains.
//!
//! Irreducibility is strong connectivity of the digraph with an edge `i -> j`
//! whenever `P[i, j] > 0`. The period of an irreducible chain is the gcd of
//! `level(i) + 1 - level(j)` over all edges, where `level` is the BFS depth
//! from any fixed root.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{CamdpError, Result};
use crate::model::STOCHASTIC_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ergodicity {
    /// Irreducible and aperiodic.
    Ergodic,
    Reducible,
    /// Irreducible with the given period (> 1).
    Periodic(usize),
}

impl Ergodicity {
    pub fn is_ergodic(self) -> bool {
        self == Ergodicity::Ergodic
    }

    pub fn is_irreducible(self) -> bool {
        !matches!(self, Ergodicity::Reducible)
    }
}

pub fn ensure_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() != p.ncols() {
        return Err(CamdpError::InvalidArgument(format!(
            "transition matrix must be square, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    for (i, row) in p.row_iter().enumerate() {
        let sum = row.sum();
        if row.iter().any(|&x| x < 0.0) || !sum.is_finite() || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(CamdpError::NotStochastic { row: i, sum });
        }
    }
    Ok(())
}

fn adjacency(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| p[(i, j)] > 0.0).collect())
        .collect()
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = VecDeque::from([root]);
    level[root] = Some(0);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Whether every state reaches every other state on the positive support.
pub fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    if n == 0 {
        return false;
    }
    let adj = adjacency(p);
    if bfs_levels(&adj, 0).iter().any(Option::is_none) {
        return false;
    }
    let mut rev = vec![Vec::new(); n];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            rev[v].push(u);
        }
    }
    bfs_levels(&rev, 0).iter().all(Option::is_some)
}

pub fn check_ergodic(p: &DMatrix<f64>) -> Result<Ergodicity> {
    ensure_stochastic(p)?;
    if !is_irreducible(p) {
        return Ok(Ergodicity::Reducible);
    }
    let adj = adjacency(p);
    let level: Vec<usize> = bfs_levels(&adj, 0).into_iter().map(Option::unwrap).collect();
    let mut period = 0;
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            period = gcd(period, (level[u] + 1).abs_diff(level[v]));
        }
    }
    Ok(if period == 1 {
        Ergodicity::Ergodic
    } else {
        Ergodicity::Periodic(period)
    })
}
