//! Per-agent policy improvement.
//!
//! For agent `i` with the other agent's policy held fixed, the one-step
//! backup of augmented state `s` under own action `a` is
//!
//! ```text
//! Q(s, a) = Σ_s' P(s' | s, a, π_other(s)) [R(s, s') + γ V(s')]
//! ```
//!
//! Backups are reduced to the agent's observable classes by averaging over
//! the member states with weights taken from the stationary distribution of
//! the current joint chain (uniform when the chain is reducible or the class
//! carries no mass). The advantage of a class is
//! `I = max_a Q̄(c, a) - Q̄(c, π(c))`.
//!
//! Three switching rules act on the advantages:
//! * classical: switch wherever `I` is positive,
//! * revised: switch only where `I ≥ η`,
//! * PI-alike: switch where `κ_I` times the sum of the last `M + 1`
//!   advantages reaches `η`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CamdpError, Result};
use crate::eval::{evaluate_direct, induced_chain, stationary_distribution};
use crate::markov::is_irreducible;
use crate::model::FactoredCaMDP;
use crate::policy::{Agent, AgentPolicy, JointPolicy, PolicyDomain};

/// Advantages at or below this are ties; the current action is kept.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct ClassAdvantage {
    pub class: usize,
    pub current_action: usize,
    /// Backup of the current action, `J_k(c)`.
    pub current_backup: f64,
    /// Lowest-index maximizer of the class backup.
    pub best_action: usize,
    /// `max_a Q̄(c, a) - J_k(c)`.
    pub advantage: f64,
    /// Class backup per action.
    pub backups: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdvantageReport {
    pub agent: Agent,
    pub domain: PolicyDomain,
    pub classes: Vec<ClassAdvantage>,
}

impl AdvantageReport {
    pub fn advantages(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.advantage).collect()
    }

    pub fn max_advantage(&self) -> f64 {
        self.classes.iter().map(|c| c.advantage).fold(0.0, f64::max)
    }

    /// Whether no class has a positive advantage.
    pub fn is_greedy_stable(&self) -> bool {
        self.classes.iter().all(|c| c.advantage <= TIE_TOL)
    }
}

/// Class-aggregated backups and advantages of `agent` under `joint`, given
/// the value vector `values` (normally the evaluation of `joint`).
pub fn action_values(
    model: &FactoredCaMDP,
    joint: &JointPolicy,
    values: &DVector<f64>,
    agent: Agent,
) -> Result<AdvantageReport> {
    let dims = model.dims();
    if values.len() != dims.n_states() {
        return Err(CamdpError::PolicyShapeMismatch(format!(
            "value vector has {} entries for {} states",
            values.len(),
            dims.n_states()
        )));
    }
    let chain = induced_chain(model, joint)?;
    let weights = if is_irreducible(&chain.p) {
        Some(stationary_distribution(&chain.p)?)
    } else {
        None
    };
    let own = joint.get(agent);
    let domain = own.domain();
    let n_actions = agent.n_actions(&dims);

    let classes = (0..own.len())
        .map(|class| {
            let members = domain.members(&dims, agent, class);
            let mut w: Vec<f64> = match &weights {
                Some(wt) => members.iter().map(|s| wt[s.flat_index]).collect(),
                None => vec![0.0; members.len()],
            };
            let mass: f64 = w.iter().sum();
            if mass > 0.0 {
                w.iter_mut().for_each(|x| *x /= mass);
            } else {
                w.fill(1.0 / members.len() as f64);
            }

            let backups: Vec<f64> = (0..n_actions)
                .map(|a| {
                    members
                        .iter()
                        .zip(&w)
                        .map(|(&s, &ws)| {
                            let (a0, a1) = joint.actions_at(&dims, s);
                            let (a0, a1) = match agent {
                                Agent::Zero => (a, a1),
                                Agent::One => (a0, a),
                            };
                            let (row, reward) = model.transition_row(s, a0, a1);
                            let future: f64 =
                                row.iter().zip(values.iter()).map(|(p, v)| p * v).sum();
                            ws * (reward + model.gamma * future)
                        })
                        .sum()
                })
                .collect();

            let mut best_action = 0;
            for (a, &q) in backups.iter().enumerate() {
                if q > backups[best_action] {
                    best_action = a;
                }
            }
            let current_action = own.actions()[class];
            let current_backup = backups[current_action];
            ClassAdvantage {
                class,
                current_action,
                current_backup,
                best_action,
                advantage: (backups[best_action] - current_backup).max(0.0),
                backups,
            }
        })
        .collect();

    Ok(AdvantageReport {
        agent,
        domain,
        classes,
    })
}

fn apply(
    report: &AdvantageReport,
    current: &AgentPolicy,
    mut switch: impl FnMut(&ClassAdvantage) -> bool,
) -> (AgentPolicy, bool) {
    assert_eq!(report.classes.len(), current.len(), "report/policy mismatch");
    let mut next = current.clone();
    let mut stable = true;
    for c in &report.classes {
        if c.advantage > TIE_TOL && c.best_action != current.actions()[c.class] && switch(c) {
            next = next.with_action(c.class, c.best_action);
            stable = false;
        }
    }
    (next, stable)
}

/// Classical improvement: adopt the best action wherever it strictly helps.
pub fn greedy_improve(report: &AdvantageReport, current: &AgentPolicy) -> (AgentPolicy, bool) {
    apply(report, current, |_| true)
}

/// Threshold-gated improvement: a class switches only when its advantage is
/// at least `eta`. `f64::INFINITY` freezes the policy.
pub fn revised_improve(
    report: &AdvantageReport,
    current: &AgentPolicy,
    eta: f64,
) -> (AgentPolicy, bool) {
    apply(report, current, |c| c.advantage >= eta)
}

/// Windowed accumulator state for PI-alike improvement, one buffer per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PiAlikeState {
    pub eta: f64,
    pub kappa: f64,
    /// `M`: the buffer holds the last `M + 1` advantages.
    pub window: usize,
    buffers: Vec<VecDeque<f64>>,
}

impl PiAlikeState {
    pub fn new(n_classes: usize, eta: f64, kappa: f64, window: usize) -> Result<Self> {
        if !(eta >= 0.0) || !(kappa >= 0.0) {
            return Err(CamdpError::InvalidArgument(format!(
                "PI-alike parameters must be nonnegative (eta {eta}, kappa {kappa})"
            )));
        }
        Ok(PiAlikeState {
            eta,
            kappa,
            window,
            buffers: vec![VecDeque::with_capacity(window.saturating_add(1).min(64)); n_classes],
        })
    }

    pub fn n_classes(&self) -> usize {
        self.buffers.len()
    }

    pub fn buffer(&self, class: usize) -> &VecDeque<f64> {
        &self.buffers[class]
    }

    /// `κ_I Σ_j I_{k-j}` for one class.
    pub fn weighted_sum(&self, class: usize) -> f64 {
        self.kappa * self.buffers[class].iter().sum::<f64>()
    }

    /// Entries of a buffer that survive the next push.
    pub fn carried(&self, class: usize) -> impl Iterator<Item = f64> + '_ {
        let buf = &self.buffers[class];
        buf.iter().skip(buf.len().saturating_sub(self.window)).copied()
    }

    /// Whether `class` would reach the threshold on some later step if every
    /// later step reported the same `advantage`.
    pub fn may_switch_later(&self, class: usize, advantage: f64) -> bool {
        if advantage <= TIE_TOL {
            return false;
        }
        let buf = &self.buffers[class];
        let len = buf.len() as f64;
        let cap = self.window as f64 + 1.0;
        let mut tail: f64 = buf.iter().sum();
        // Drop `d` oldest entries and refill the window with copies.
        for d in 0..=buf.len() {
            if d > 0 {
                tail -= buf[d - 1];
            }
            let copies = cap - len + d as f64;
            if copies >= 1.0 && self.kappa * (tail + copies * advantage) >= self.eta {
                return true;
            }
        }
        false
    }
}

/// PI-alike improvement. Appends this step's advantages, switches classes
/// whose weighted window sum reaches `eta`, and clears the buffer of every
/// class that switched.
pub fn pi_alike_improve(
    report: &AdvantageReport,
    current: &AgentPolicy,
    mut state: PiAlikeState,
) -> (AgentPolicy, bool, PiAlikeState) {
    assert_eq!(state.buffers.len(), current.len(), "state/policy mismatch");
    for c in &report.classes {
        let buf = &mut state.buffers[c.class];
        if buf.len() == state.window.saturating_add(1) {
            buf.pop_front();
        }
        buf.push_back(c.advantage);
    }
    let (next, stable) = apply(report, current, |c| state.weighted_sum(c.class) >= state.eta);
    for (class, (&old, &new)) in current.actions().iter().zip(next.actions()).enumerate() {
        if old != new {
            state.buffers[class].clear();
        }
    }
    (next, stable, state)
}

/// Classes whose action differs between two policies of the same agent.
pub fn switched_classes(old: &AgentPolicy, new: &AgentPolicy) -> Vec<usize> {
    old.actions()
        .iter()
        .zip(new.actions())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect()
}

/// Value-loss bound of threshold-gated improvement: the per-state vector
/// `η (I - γ P*)^{-1} 1` and the scalar `η / (1 - γ)`.
pub fn value_loss_bound(
    model: &FactoredCaMDP,
    pi_star: &JointPolicy,
    gamma: f64,
    eta: f64,
) -> Result<(DVector<f64>, f64)> {
    if !(eta >= 0.0) {
        return Err(CamdpError::InvalidArgument(format!("eta {eta} must be nonnegative")));
    }
    let chain = induced_chain(model, pi_star)?;
    let n = chain.n_states();
    let a = DMatrix::identity(n, n) - gamma * &chain.p;
    let ones = DVector::from_element(n, 1.0);
    let resolvent = a.lu().solve(&ones).ok_or(CamdpError::SingularSystem)?;
    Ok((resolvent * eta, eta / (1.0 - gamma)))
}

/// Switching rule used by [`improve_until_stable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SingleAgentRule {
    Classical,
    Revised(f64),
}

/// Improves one agent with the other frozen until no class switches.
/// Returns the stable joint policy and the number of improvement rounds.
pub fn improve_until_stable(
    model: &FactoredCaMDP,
    start: &JointPolicy,
    agent: Agent,
    rule: SingleAgentRule,
    max_rounds: usize,
) -> Result<(JointPolicy, usize)> {
    let dims = model.dims();
    let mut joint = start.clone();
    for round in 0..max_rounds {
        let chain = induced_chain(model, &joint)?;
        let values = evaluate_direct(&chain, model.gamma)?.values;
        let report = action_values(model, &joint, &values, agent)?;
        let (next, stable) = match rule {
            SingleAgentRule::Classical => greedy_improve(&report, joint.get(agent)),
            SingleAgentRule::Revised(eta) => revised_improve(&report, joint.get(agent), eta),
        };
        if stable {
            return Ok((joint, round));
        }
        joint = joint.with(&dims, next)?;
    }
    Err(CamdpError::MaxItersExceeded {
        iters: max_rounds,
        residual: f64::NAN,
    })
}
