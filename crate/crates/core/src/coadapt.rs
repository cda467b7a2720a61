//! Two-agent mutual learning: evaluate the joint policy, let each agent
//! improve against it, repeat.
//!
//! Under the simultaneous schedule both agents compute their improvement
//! against the same value vector and apply it together. Under the
//! alternating schedule agent 0 moves first and agent 1 answers the
//! re-evaluated intermediate policy within the same round.
//!
//! A round is recorded once per evaluate/improve pass. The loop stops when
//! a round changes nothing and no improver has pending accumulation, when
//! the sequence of rounds enters a cycle, or after `max_iters` rounds.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{CamdpError, Result};
use crate::eval::{evaluate_direct, induced_chain, stationary_distribution, EvalResult};
use crate::improve::{
    action_values, greedy_improve, pi_alike_improve, revised_improve, switched_classes,
    AdvantageReport, PiAlikeState,
};
use crate::markov::is_irreducible;
use crate::model::{FactoredCaMDP, RewardMode};
use crate::policy::{Agent, AgentPolicy, JointPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Schedule {
    Simultaneous,
    Alternating,
}

impl FromStr for Schedule {
    type Err = CamdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simultaneous" | "sim" => Ok(Schedule::Simultaneous),
            "alternating" | "alt" => Ok(Schedule::Alternating),
            other => Err(CamdpError::Parse(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Switching rule of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ImproverSpec {
    Classical,
    Revised { eta: f64 },
    PiAlike { eta: f64, kappa: f64, window: usize },
}

impl FromStr for ImproverSpec {
    type Err = CamdpError;

    /// `classical`, `revised:<eta>` or `pialike:<eta>:<kappa>:<window>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| -> Result<f64> {
            x.trim()
                .parse::<f64>()
                .map_err(|e| CamdpError::Parse(format!("`{x}` in improver `{s}`: {e}")))
        };
        let spec = match parts.as_slice() {
            ["classical"] => ImproverSpec::Classical,
            ["revised", eta] => ImproverSpec::Revised { eta: num(eta)? },
            ["pialike", eta, kappa, window] => ImproverSpec::PiAlike {
                eta: num(eta)?,
                kappa: num(kappa)?,
                window: window
                    .trim()
                    .parse()
                    .map_err(|e| CamdpError::Parse(format!("window `{window}`: {e}")))?,
            },
            _ => {
                return Err(CamdpError::Parse(format!(
                    "improver `{s}` must be classical, revised:<eta> or pialike:<eta>:<kappa>:<window>"
                )))
            }
        };
        spec.check()?;
        Ok(spec)
    }
}

impl fmt::Display for ImproverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImproverSpec::Classical => f.write_str("classical"),
            ImproverSpec::Revised { eta } => write!(f, "revised:{eta:e}"),
            ImproverSpec::PiAlike { eta, kappa, window } => {
                write!(f, "pialike:{eta:e}:{kappa}:{window}")
            }
        }
    }
}

impl ImproverSpec {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            ImproverSpec::Classical => true,
            ImproverSpec::Revised { eta } => eta >= 0.0,
            ImproverSpec::PiAlike { eta, kappa, .. } => eta >= 0.0 && kappa >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CamdpError::InvalidArgument(format!(
                "improver {self} has a negative parameter"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoadaptConfig {
    pub schedule: Schedule,
    /// Improvers of agent 0 and agent 1.
    pub improvers: [ImproverSpec; 2],
    pub max_iters: usize,
    /// Residual the in-loop direct evaluation must meet.
    pub eval_tol: f64,
    pub gamma: f64,
    pub reward_mode: RewardMode,
}

impl CoadaptConfig {
    /// Simultaneous classical improvement with the model's own discount and
    /// reward mode.
    pub fn for_model(model: &FactoredCaMDP) -> Self {
        CoadaptConfig {
            schedule: Schedule::Simultaneous,
            improvers: [ImproverSpec::Classical; 2],
            max_iters: 50,
            eval_tol: 1e-9,
            gamma: model.gamma,
            reward_mode: model.reward_mode,
        }
    }

    pub fn with_improvers(mut self, agent0: ImproverSpec, agent1: ImproverSpec) -> Self {
        self.improvers = [agent0, agent1];
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    fn check(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(CamdpError::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.eval_tol > 0.0) {
            return Err(CamdpError::InvalidArgument("eval_tol must be positive".into()));
        }
        self.improvers.iter().try_for_each(ImproverSpec::check)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cycle {
    pub period: usize,
    /// Distinct joint-policy numbers on the cycle, ascending.
    pub members: Vec<u64>,
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m: Vec<String> = self.members.iter().map(|n| format!("No.{n}")).collect();
        write!(f, "period {} over {{{}}}", self.period, m.join(", "))
    }
}

/// Smallest period `p` such that the last `2p` entries repeat with period
/// `p`. Returns `None` when the tail is constant (a fixed point) or no
/// period fits.
fn find_period<T: PartialEq>(seq: &[T]) -> Option<usize> {
    let n = seq.len();
    (1..=n / 2).find(|&p| (n - p..n).all(|i| seq[i] == seq[i - p]))
}

/// Cycle in a sequence of joint-policy numbers, if its tail is periodic
/// with period at least 2.
pub fn detect_cycle(numbers: &[u64]) -> Option<Cycle> {
    match find_period(numbers) {
        Some(p) if p >= 2 => {
            let mut members = numbers[numbers.len() - p..].to_vec();
            members.sort_unstable();
            members.dedup();
            Some(Cycle { period: p, members })
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CoadaptStatus {
    Converged,
    Cycling(Cycle),
    MaxIters,
}

impl CoadaptStatus {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoadaptStatus::Converged => 0,
            CoadaptStatus::Cycling(_) => 2,
            CoadaptStatus::MaxIters => 3,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CoadaptStatus::Converged => "converged".into(),
            CoadaptStatus::Cycling(c) => format!("cycling({})", c.period),
            CoadaptStatus::MaxIters => "max_iters".into(),
        }
    }
}

/// One evaluate/improve round.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based round number.
    pub iter: usize,
    /// Joint policy evaluated at the start of the round.
    pub joint: JointPolicy,
    pub gain: Option<f64>,
    /// Stationary-weighted mean of the discounted values (uniform mean when
    /// the chain is reducible).
    pub mean_value: f64,
    pub max_value: f64,
    /// Classes switched by agent 0 and agent 1 in this round.
    pub switches: [Vec<usize>; 2],
    /// Agent 0's improved policy paired with the agent-1 policy it answered.
    pub response: JointPolicy,
    /// Joint policy handed to the next round.
    pub next: JointPolicy,
}

#[derive(Debug, Clone)]
pub struct CoadaptTrace {
    pub records: Vec<IterationRecord>,
    pub status: CoadaptStatus,
    /// Cycle of the agent-0 response pairs, when the run cycles.
    pub response_cycle: Option<Cycle>,
}

impl CoadaptTrace {
    pub fn final_policy(&self) -> &JointPolicy {
        &self.records.last().expect("trace is never empty").next
    }

    pub fn numbers(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.joint.number()).collect()
    }

    pub fn total_switches(&self, agent: Agent) -> usize {
        self.records.iter().map(|r| r.switches[agent.index()].len()).sum()
    }

    /// CSV with header `iter,policy_no,pi0_digits,pi1_digits,gain,switches_agent0,switches_agent1,status`.
    /// Intermediate rows carry status `running`; the last row carries the
    /// terminal status.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iter,policy_no,pi0_digits,pi1_digits,gain,switches_agent0,switches_agent1,status\n",
        );
        let last = self.records.len() - 1;
        for (i, r) in self.records.iter().enumerate() {
            let status = if i == last { self.status.label() } else { "running".into() };
            let gain = r.gain.map(|g| g.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.iter,
                r.joint.number(),
                r.joint.pi0.digits(),
                r.joint.pi1.digits(),
                gain,
                r.switches[0].len(),
                r.switches[1].len(),
                status
            ));
        }
        out
    }
}

enum Improver {
    Classical,
    Revised(f64),
    PiAlike(PiAlikeState),
}

impl Improver {
    fn new(spec: ImproverSpec, n_classes: usize) -> Result<Self> {
        Ok(match spec {
            ImproverSpec::Classical => Improver::Classical,
            ImproverSpec::Revised { eta } => Improver::Revised(eta),
            ImproverSpec::PiAlike { eta, kappa, window } => {
                Improver::PiAlike(PiAlikeState::new(n_classes, eta, kappa, window)?)
            }
        })
    }

    /// Returns the new policy and whether this improver is at rest: it
    /// switched nothing and would never switch if the same report kept
    /// coming back.
    fn step(&mut self, report: &AdvantageReport, current: &AgentPolicy) -> (AgentPolicy, bool) {
        match self {
            Improver::Classical => greedy_improve(report, current),
            Improver::Revised(eta) => revised_improve(report, current, *eta),
            Improver::PiAlike(state) => {
                let (next, stable, after) = pi_alike_improve(report, current, state.clone());
                let idle = stable
                    && report
                        .classes
                        .iter()
                        .all(|c| !after.may_switch_later(c.class, c.advantage));
                *state = after;
                (next, idle)
            }
        }
    }

    fn fingerprint(&self, h: &mut DefaultHasher) {
        if let Improver::PiAlike(state) = self {
            for class in 0..state.n_classes() {
                for x in state.carried(class) {
                    x.to_bits().hash(h);
                }
                u64::MAX.hash(h);
            }
        }
    }
}

struct Evaluated {
    eval: EvalResult,
    weights: Option<DVector<f64>>,
}

fn evaluate(model: &FactoredCaMDP, joint: &JointPolicy, tol: f64) -> Result<Evaluated> {
    let chain = induced_chain(model, joint)?;
    let eval = evaluate_direct(&chain, model.gamma)?;
    if eval.residual >= tol {
        return Err(CamdpError::SingularSystem);
    }
    let weights = if is_irreducible(&chain.p) {
        Some(stationary_distribution(&chain.p)?)
    } else {
        None
    };
    Ok(Evaluated { eval, weights })
}

/// Runs the mutual-learning loop from `init`.
pub fn run_coadapt(
    model: &FactoredCaMDP,
    init: &JointPolicy,
    config: &CoadaptConfig,
) -> Result<CoadaptTrace> {
    config.check()?;
    let model = model
        .clone()
        .with_gamma(config.gamma)?
        .with_reward_mode(config.reward_mode);
    let dims = model.dims();
    let mut improvers = [
        Improver::new(config.improvers[0], init.pi0.len())?,
        Improver::new(config.improvers[1], init.pi1.len())?,
    ];

    let mut joint = init.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut fingerprints: Vec<(u64, u64)> = Vec::new();

    for iter in 1..=config.max_iters {
        let current = evaluate(&model, &joint, config.eval_tol)?;
        let values = &current.eval.values;

        let report0 = action_values(&model, &joint, values, Agent::Zero)?;
        let (new0, rest0) = improvers[0].step(&report0, &joint.pi0);

        let (new1, rest1) = match config.schedule {
            Schedule::Simultaneous => {
                let report1 = action_values(&model, &joint, values, Agent::One)?;
                improvers[1].step(&report1, &joint.pi1)
            }
            Schedule::Alternating => {
                let mid = JointPolicy::new(&dims, new0.clone(), joint.pi1.clone())?;
                let mid_values = if mid == joint {
                    values.clone()
                } else {
                    evaluate(&model, &mid, config.eval_tol)?.eval.values
                };
                let report1 = action_values(&model, &mid, &mid_values, Agent::One)?;
                improvers[1].step(&report1, &joint.pi1)
            }
        };

        let switches = [
            switched_classes(&joint.pi0, &new0),
            switched_classes(&joint.pi1, &new1),
        ];
        let response = JointPolicy::new(&dims, new0.clone(), joint.pi1.clone())?;
        let next = JointPolicy::new(&dims, new0, new1)?;
        let mean_value = match &current.weights {
            Some(w) => current.eval.weighted_mean(w),
            None => values.mean(),
        };
        records.push(IterationRecord {
            iter,
            joint: joint.clone(),
            gain: current.eval.gain,
            mean_value,
            max_value: current.eval.max_value(),
            switches,
            response,
            next: next.clone(),
        });

        if next == joint && rest0 && rest1 {
            return Ok(CoadaptTrace {
                records,
                status: CoadaptStatus::Converged,
                response_cycle: None,
            });
        }

        let mut h = DefaultHasher::new();
        improvers.iter().for_each(|imp| imp.fingerprint(&mut h));
        fingerprints.push((next.number(), h.finish()));
        if let Some(p) = find_period(&fingerprints) {
            if p >= 2 {
                let numbers: Vec<u64> = records.iter().map(|r| r.joint.number()).collect();
                let responses: Vec<u64> = records.iter().map(|r| r.response.number()).collect();
                let cycle = detect_cycle(&numbers).unwrap_or_else(|| {
                    let mut members = numbers[numbers.len() - p..].to_vec();
                    members.sort_unstable();
                    members.dedup();
                    Cycle { period: p, members }
                });
                return Ok(CoadaptTrace {
                    records,
                    status: CoadaptStatus::Cycling(cycle),
                    response_cycle: detect_cycle(&responses),
                });
            }
        }
        joint = next;
    }

    Ok(CoadaptTrace {
        records,
        status: CoadaptStatus::MaxIters,
        response_cycle: None,
    })
}
