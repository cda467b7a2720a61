//! Deterministic per-agent policies and the canonical joint-policy numbering.
//!
//! An agent normally acts on its *observable class*, the pair
//! (own-state, shared-state). Actions are stored own-state major, so for
//! agent 0 on a 2x2 model the order is `(s0=0,ss=0), (0,1), (1,0), (1,1)`.
//! A full-state domain (one action per augmented state) is also available
//! for single-agent comparisons.
//!
//! Joint policies are numbered from 1: the action list of each agent is read
//! as a base-`m` integer with the first entry most significant, and
//! `number = |Π1| * digits(pi0) + digits(pi1) + 1` where `|Π1|` is the number
//! of agent-1 policies.

use std::fmt;

use serde::Serialize;

use crate::error::{CamdpError, Result};
use crate::model::{Dims, JointState};

/// Joint-policy count above which enumeration refuses to run.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Agent {
    Zero,
    One,
}

impl Agent {
    pub const BOTH: [Agent; 2] = [Agent::Zero, Agent::One];

    pub fn index(self) -> usize {
        match self {
            Agent::Zero => 0,
            Agent::One => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Agent::Zero),
            1 => Ok(Agent::One),
            _ => Err(CamdpError::InvalidArgument(format!("agent id {i} is not 0 or 1"))),
        }
    }

    pub fn n_actions(self, dims: &Dims) -> usize {
        match self {
            Agent::Zero => dims.m0,
            Agent::One => dims.m1,
        }
    }

    fn n_own(self, dims: &Dims) -> usize {
        match self {
            Agent::Zero => dims.n0,
            Agent::One => dims.n1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PolicyDomain {
    /// One action per (own-state, shared-state) pair.
    Observable,
    /// One action per augmented state.
    FullState,
}

impl PolicyDomain {
    pub fn len(self, dims: &Dims, agent: Agent) -> usize {
        match self {
            PolicyDomain::Observable => agent.n_own(dims) * dims.ns,
            PolicyDomain::FullState => dims.n_states(),
        }
    }

    pub fn class_of(self, dims: &Dims, agent: Agent, s: JointState) -> usize {
        match (self, agent) {
            (PolicyDomain::FullState, _) => s.flat_index,
            (PolicyDomain::Observable, Agent::Zero) => s.s0 * dims.ns + s.ss,
            (PolicyDomain::Observable, Agent::One) => s.s1 * dims.ns + s.ss,
        }
    }

    /// Augmented states that fall into `class`, in flat-index order.
    pub fn members(self, dims: &Dims, agent: Agent, class: usize) -> Vec<JointState> {
        match (self, agent) {
            (PolicyDomain::FullState, _) => vec![dims.state_at(class)],
            (PolicyDomain::Observable, Agent::Zero) => {
                let (s0, ss) = (class / dims.ns, class % dims.ns);
                (0..dims.n1).map(|s1| dims.state(s0, ss, s1)).collect()
            }
            (PolicyDomain::Observable, Agent::One) => {
                let (s1, ss) = (class / dims.ns, class % dims.ns);
                (0..dims.n0).map(|s0| dims.state(s0, ss, s1)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AgentPolicy {
    agent: Agent,
    domain: PolicyDomain,
    actions: Vec<usize>,
}

impl AgentPolicy {
    pub fn new(dims: &Dims, agent: Agent, domain: PolicyDomain, actions: Vec<usize>) -> Result<Self> {
        let want = domain.len(dims, agent);
        if actions.len() != want {
            return Err(CamdpError::PolicyShapeMismatch(format!(
                "agent {} policy has {} entries, expected {want}",
                agent.index(),
                actions.len()
            )));
        }
        let m = agent.n_actions(dims);
        if let Some((i, a)) = actions.iter().enumerate().find(|(_, &a)| a >= m) {
            return Err(CamdpError::PolicyShapeMismatch(format!(
                "agent {} entry {i} is action {a}, but only {m} actions exist",
                agent.index()
            )));
        }
        Ok(AgentPolicy { agent, domain, actions })
    }

    /// Policy over observable classes.
    pub fn observable(dims: &Dims, agent: Agent, actions: Vec<usize>) -> Result<Self> {
        Self::new(dims, agent, PolicyDomain::Observable, actions)
    }

    /// Every class plays `action`.
    pub fn constant(dims: &Dims, agent: Agent, domain: PolicyDomain, action: usize) -> Result<Self> {
        Self::new(dims, agent, domain, vec![action; domain.len(dims, agent)])
    }

    /// Parses a digit string such as `"0110"` (whitespace and brackets are
    /// ignored).
    pub fn parse(dims: &Dims, agent: Agent, domain: PolicyDomain, text: &str) -> Result<Self> {
        let actions = text
            .chars()
            .filter(|c| !c.is_whitespace() && !matches!(c, '[' | ']' | ','))
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as usize)
                    .ok_or_else(|| CamdpError::Parse(format!("`{c}` is not an action digit")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, agent, domain, actions)
    }

    pub fn agent(&self) -> Agent {
        self.agent
    }

    pub fn domain(&self) -> PolicyDomain {
        self.domain
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    #[inline]
    pub fn action_at(&self, dims: &Dims, s: JointState) -> usize {
        self.actions[self.domain.class_of(dims, self.agent, s)]
    }

    pub fn with_action(&self, class: usize, action: usize) -> Self {
        let mut out = self.clone();
        out.actions[class] = action;
        out
    }

    /// Compact digit form, e.g. `1100`.
    pub fn digits(&self) -> String {
        self.actions.iter().map(|a| a.to_string()).collect()
    }

    fn value(&self, base: u128) -> Option<u128> {
        self.actions
            .iter()
            .try_fold(0u128, |acc, &a| acc.checked_mul(base)?.checked_add(a as u128))
    }
}

impl fmt::Display for AgentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.actions.iter().map(|a| a.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

fn count_policies(base: usize, len: usize) -> Option<u128> {
    (0..len).try_fold(1u128, |acc, _| acc.checked_mul(base as u128))
}

/// Canonical 1-based number of the joint policy `(pi0, pi1)`.
pub fn policy_number(dims: &Dims, pi0: &AgentPolicy, pi1: &AgentPolicy) -> Result<u64> {
    if pi0.agent != Agent::Zero || pi1.agent != Agent::One {
        return Err(CamdpError::PolicyShapeMismatch(
            "joint policy must pair an agent-0 policy with an agent-1 policy".into(),
        ));
    }
    for pi in [pi0, pi1] {
        let want = pi.domain.len(dims, pi.agent);
        if pi.len() != want || pi.actions.iter().any(|&a| a >= pi.agent.n_actions(dims)) {
            return Err(CamdpError::PolicyShapeMismatch(format!(
                "agent {} policy does not fit the model",
                pi.agent.index()
            )));
        }
    }
    let overflow = || CamdpError::SizeOverflow {
        count: u128::MAX,
        cap: u64::MAX as u128,
    };
    let n1 = count_policies(dims.m1, pi1.len()).ok_or_else(overflow)?;
    let number = pi0
        .value(dims.m0 as u128)
        .and_then(|d0| d0.checked_mul(n1))
        .and_then(|x| x.checked_add(pi1.value(dims.m1 as u128)?))
        .and_then(|x| x.checked_add(1))
        .ok_or_else(overflow)?;
    u64::try_from(number).map_err(|_| CamdpError::SizeOverflow {
        count: number,
        cap: u64::MAX as u128,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointPolicy {
    pub pi0: AgentPolicy,
    pub pi1: AgentPolicy,
    number: u64,
}

impl JointPolicy {
    pub fn new(dims: &Dims, pi0: AgentPolicy, pi1: AgentPolicy) -> Result<Self> {
        let number = policy_number(dims, &pi0, &pi1)?;
        Ok(JointPolicy { pi0, pi1, number })
    }

    /// Parses `"<pi0 digits>:<pi1 digits>"` over observable domains.
    pub fn parse(dims: &Dims, text: &str) -> Result<Self> {
        let (a, b) = text.split_once(':').ok_or_else(|| {
            CamdpError::Parse(format!("policy `{text}` must look like `0000:1100`"))
        })?;
        let pi0 = AgentPolicy::parse(dims, Agent::Zero, PolicyDomain::Observable, a)?;
        let pi1 = AgentPolicy::parse(dims, Agent::One, PolicyDomain::Observable, b)?;
        Self::new(dims, pi0, pi1)
    }

    /// Inverse of [`policy_number`] over observable domains.
    pub fn from_number(dims: &Dims, number: u64) -> Result<Self> {
        let len0 = PolicyDomain::Observable.len(dims, Agent::Zero);
        let len1 = PolicyDomain::Observable.len(dims, Agent::One);
        let total = joint_count(dims, len0, len1)?;
        if number == 0 || number as u128 > total {
            return Err(CamdpError::InvalidArgument(format!(
                "policy number {number} outside 1..={total}"
            )));
        }
        let n1 = count_policies(dims.m1, len1).unwrap();
        let idx = number as u128 - 1;
        let pi0 = decode_digits(idx / n1, dims.m0, len0);
        let pi1 = decode_digits(idx % n1, dims.m1, len1);
        Ok(JointPolicy {
            pi0: AgentPolicy {
                agent: Agent::Zero,
                domain: PolicyDomain::Observable,
                actions: pi0,
            },
            pi1: AgentPolicy {
                agent: Agent::One,
                domain: PolicyDomain::Observable,
                actions: pi1,
            },
            number,
        })
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    pub fn get(&self, agent: Agent) -> &AgentPolicy {
        match agent {
            Agent::Zero => &self.pi0,
            Agent::One => &self.pi1,
        }
    }

    /// Replaces one agent's policy and renumbers.
    pub fn with(&self, dims: &Dims, policy: AgentPolicy) -> Result<Self> {
        match policy.agent {
            Agent::Zero => Self::new(dims, policy, self.pi1.clone()),
            Agent::One => Self::new(dims, self.pi0.clone(), policy),
        }
    }

    /// `(a0, a1)` played in augmented state `s`.
    #[inline]
    pub fn actions_at(&self, dims: &Dims, s: JointState) -> (usize, usize) {
        (self.pi0.action_at(dims, s), self.pi1.action_at(dims, s))
    }

    /// `"0000:1100"` form accepted by [`JointPolicy::parse`].
    pub fn digits(&self) -> String {
        format!("{}:{}", self.pi0.digits(), self.pi1.digits())
    }
}

impl fmt::Display for JointPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{} (No.{})", self.pi0, self.pi1, self.number)
    }
}

fn decode_digits(mut value: u128, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (value % base as u128) as usize;
        value /= base as u128;
    }
    out
}

fn joint_count(dims: &Dims, len0: usize, len1: usize) -> Result<u128> {
    count_policies(dims.m0, len0)
        .zip(count_policies(dims.m1, len1))
        .and_then(|(a, b)| a.checked_mul(b))
        .ok_or(CamdpError::SizeOverflow {
            count: u128::MAX,
            cap: DEFAULT_ENUMERATION_CAP,
        })
}

/// Number of joint policies over observable domains.
pub fn joint_policy_count(dims: &Dims) -> Result<u128> {
    joint_count(
        dims,
        PolicyDomain::Observable.len(dims, Agent::Zero),
        PolicyDomain::Observable.len(dims, Agent::One),
    )
}

/// All joint policies over observable domains in ascending number order.
pub fn enumerate_all(dims: &Dims, cap: u128) -> Result<impl Iterator<Item = JointPolicy> + '_> {
    let count = joint_policy_count(dims)?;
    if count > cap {
        return Err(CamdpError::SizeOverflow { count, cap });
    }
    Ok((1..=count as u64).map(move |n| JointPolicy::from_number(dims, n).expect("in range")))
}
