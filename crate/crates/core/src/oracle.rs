//! Brute-force ground truth over the whole joint-policy space, calibration of
//! the evaluation settings against reference values, and threshold scans of
//! the co-adaptation loop.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::coadapt::{run_coadapt, CoadaptConfig, CoadaptStatus, Cycle, ImproverSpec};
use crate::error::{CamdpError, Result};
use crate::eval::{evaluate_iterative, gain, induced_chain, stationary_distribution};
use crate::model::{FactoredCaMDP, RewardMode};
use crate::policy::{enumerate_all, JointPolicy, DEFAULT_ENUMERATION_CAP};

/// Tolerance of the fixed-point evaluation used by the oracle.
pub const ORACLE_TOL: f64 = 1e-12;
const ORACLE_MAX_ITERS: usize = 1_000_000;

/// Scalar score of a joint policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ValueCriterion {
    /// Average reward per step.
    Gain,
    /// Discounted values averaged under the stationary distribution.
    StationaryMean { gamma: f64 },
    /// Discounted value of one augmented state.
    AtState { gamma: f64, state: usize },
}

impl fmt::Display for ValueCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueCriterion::Gain => f.write_str("gain"),
            ValueCriterion::StationaryMean { gamma } => write!(f, "discounted(gamma={gamma})"),
            ValueCriterion::AtState { gamma, state } => {
                write!(f, "discounted(gamma={gamma}, state={state})")
            }
        }
    }
}

/// Score of `joint` under `criterion`. Discounted values come from the
/// fixed-point evaluator, not the linear solve.
pub fn policy_value(
    model: &FactoredCaMDP,
    joint: &JointPolicy,
    criterion: ValueCriterion,
) -> Result<f64> {
    let chain = induced_chain(model, joint)?;
    match criterion {
        ValueCriterion::Gain => gain(&chain),
        ValueCriterion::StationaryMean { gamma } => {
            let v = evaluate_iterative(&chain, gamma, ORACLE_TOL, ORACLE_MAX_ITERS)?.values;
            let w = stationary_distribution(&chain.p)?;
            Ok(w.dot(&v))
        }
        ValueCriterion::AtState { gamma, state } => {
            if state >= chain.n_states() {
                return Err(CamdpError::InvalidArgument(format!(
                    "state {state} out of range"
                )));
            }
            let v = evaluate_iterative(&chain, gamma, ORACLE_TOL, ORACLE_MAX_ITERS)?.values;
            Ok(v[state])
        }
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub best: JointPolicy,
    pub value: f64,
    /// Every joint policy with its score, ascending by number.
    pub table: Vec<(JointPolicy, f64)>,
}

impl BruteForceResult {
    pub fn value_of(&self, number: u64) -> Option<f64> {
        self.table
            .get(number.checked_sub(1)? as usize)
            .map(|(_, v)| *v)
    }

    /// CSV with header `policy_no,pi0,pi1,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy_no,pi0,pi1,value\n");
        for (jp, v) in &self.table {
            out.push_str(&format!(
                "{},{},{},{}\n",
                jp.number(),
                jp.pi0.digits(),
                jp.pi1.digits(),
                v
            ));
        }
        out
    }
}

/// Scores every joint policy and returns the maximizer (lowest number on
/// ties) together with the full table.
pub fn brute_force_optimal(
    model: &FactoredCaMDP,
    criterion: ValueCriterion,
) -> Result<BruteForceResult> {
    let dims = model.dims();
    let policies: Vec<JointPolicy> = enumerate_all(&dims, DEFAULT_ENUMERATION_CAP)?.collect();
    let table: Vec<(JointPolicy, f64)> = policies
        .into_par_iter()
        .map(|jp| policy_value(model, &jp, criterion).map(|v| (jp, v)))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, (_, v)) in table.iter().enumerate() {
        if *v > table[best].1 {
            best = i;
        }
    }
    Ok(BruteForceResult {
        best: table[best].0.clone(),
        value: table[best].1,
        table,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationTarget {
    /// `"<pi0>:<pi1>"` digit form.
    pub policy: String,
    pub value: f64,
}

impl CalibrationTarget {
    pub fn new(policy: &str, value: f64) -> Self {
        CalibrationTarget {
            policy: policy.to_string(),
            value,
        }
    }
}

/// Reference policy values of the two-agent example, in table order.
pub fn reference_targets() -> Vec<CalibrationTarget> {
    vec![
        CalibrationTarget::new("1111:1111", 0.180),
        CalibrationTarget::new("0111:1100", 0.187),
        CalibrationTarget::new("0001:1100", 0.207),
        CalibrationTarget::new("0000:1100", 0.210),
        CalibrationTarget::new("1010:1110", 0.196),
    ]
}

/// Discount factors searched by [`calibrate`].
pub const CALIBRATION_GAMMAS: [f64; 4] = [0.5, 0.9, 0.98, 0.99];

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationEntry {
    pub reward_mode: RewardMode,
    pub criterion: ValueCriterion,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub max_error: f64,
    /// Whether the computed values rank the targets in the same strict order.
    pub ordering_matches: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub targets: Vec<CalibrationTarget>,
    pub best_reward_mode: RewardMode,
    pub best_criterion: ValueCriterion,
    pub best_max_error: f64,
    /// Smallest max error reached by each reward mode.
    pub best_error_per_mode: Vec<(RewardMode, f64)>,
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationReport {
    pub fn best(&self) -> &CalibrationEntry {
        self.entries
            .iter()
            .find(|e| e.reward_mode == self.best_reward_mode && e.criterion == self.best_criterion)
            .expect("best entry is in the grid")
    }

    /// Applies the selected reward mode (and discount, for discounted
    /// criteria) to a model.
    pub fn apply(&self, model: &FactoredCaMDP) -> Result<FactoredCaMDP> {
        let m = model.clone().with_reward_mode(self.best_reward_mode);
        match self.best_criterion {
            ValueCriterion::Gain => Ok(m),
            ValueCriterion::StationaryMean { gamma } | ValueCriterion::AtState { gamma, .. } => {
                m.with_gamma(gamma)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn same_strict_order(a: &[f64], b: &[f64]) -> bool {
    (0..a.len()).all(|i| {
        (0..a.len()).all(|j| {
            i == j || (a[i] < a[j]) == (b[i] < b[j]) && (a[i] == a[j]) == (b[i] == b[j])
        })
    })
}

/// Searches reward mode × criterion for the setting that best reproduces
/// `targets` (smallest maximum absolute error; earliest grid entry on ties).
pub fn calibrate(model: &FactoredCaMDP, targets: &[CalibrationTarget]) -> Result<CalibrationReport> {
    if targets.is_empty() {
        return Err(CamdpError::InvalidArgument("no calibration targets".into()));
    }
    let dims = model.dims();
    let policies: Vec<JointPolicy> = targets
        .iter()
        .map(|t| JointPolicy::parse(&dims, &t.policy))
        .collect::<Result<_>>()?;
    let wanted: Vec<f64> = targets.iter().map(|t| t.value).collect();

    let mut criteria = vec![ValueCriterion::Gain];
    criteria.extend(
        CALIBRATION_GAMMAS
            .iter()
            .map(|&gamma| ValueCriterion::StationaryMean { gamma }),
    );

    let mut entries = Vec::new();
    for mode in RewardMode::ALL {
        let m = model.clone().with_reward_mode(mode);
        for &criterion in &criteria {
            let values = policies
                .iter()
                .map(|jp| policy_value(&m, jp, criterion))
                .collect::<Result<Vec<f64>>>()?;
            let errors: Vec<f64> = values.iter().zip(&wanted).map(|(v, t)| (v - t).abs()).collect();
            entries.push(CalibrationEntry {
                reward_mode: mode,
                criterion,
                max_error: errors.iter().cloned().fold(0.0, f64::max),
                ordering_matches: same_strict_order(&values, &wanted),
                values,
                errors,
            });
        }
    }

    let mut best = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.max_error < entries[best].max_error {
            best = i;
        }
    }
    let best_error_per_mode = RewardMode::ALL
        .iter()
        .map(|&mode| {
            let err = entries
                .iter()
                .filter(|e| e.reward_mode == mode)
                .map(|e| e.max_error)
                .fold(f64::INFINITY, f64::min);
            (mode, err)
        })
        .collect();
    Ok(CalibrationReport {
        targets: targets.to_vec(),
        best_reward_mode: entries[best].reward_mode,
        best_criterion: entries[best].criterion,
        best_max_error: entries[best].max_error,
        best_error_per_mode,
        entries,
    })
}

/// Outcome class of one co-adaptation run, used to group thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BandOutcome {
    Converged(u64),
    Cycling(Vec<u64>),
    MaxIters,
}

impl fmt::Display for BandOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandOutcome::Converged(n) => write!(f, "converged No.{n}"),
            BandOutcome::Cycling(m) => {
                let m: Vec<String> = m.iter().map(|n| format!("No.{n}")).collect();
                write!(f, "cycling {{{}}}", m.join(", "))
            }
            BandOutcome::MaxIters => f.write_str("max_iters"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EtaOutcome {
    pub eta: f64,
    pub outcome: BandOutcome,
    pub final_policy: u64,
    pub iterations: usize,
    /// Agent-0 switches over the whole run.
    pub switches_agent0: usize,
    /// Cycle of agent 0's responses paired with the agent-1 policy they
    /// answered, when the run cycles.
    pub response_cycle: Option<Cycle>,
}

/// Threshold interval where the outcome changes.
#[derive(Debug, Clone, Serialize)]
pub struct BandEdge {
    /// Largest threshold seen with the lower band's outcome.
    pub lower: f64,
    /// Smallest threshold seen with the upper band's outcome.
    pub upper: f64,
    pub above: BandOutcome,
    pub below: BandOutcome,
}

fn scan_one(
    model: &FactoredCaMDP,
    init: &JointPolicy,
    template: &CoadaptConfig,
    eta: f64,
) -> Result<EtaOutcome> {
    let config = template
        .clone()
        .with_improvers(ImproverSpec::Revised { eta }, ImproverSpec::Classical);
    let trace = run_coadapt(model, init, &config)?;
    let outcome = match &trace.status {
        CoadaptStatus::Converged => BandOutcome::Converged(trace.final_policy().number()),
        CoadaptStatus::Cycling(c) => BandOutcome::Cycling(c.members.clone()),
        CoadaptStatus::MaxIters => BandOutcome::MaxIters,
    };
    Ok(EtaOutcome {
        eta,
        outcome,
        final_policy: trace.final_policy().number(),
        iterations: trace.records.len(),
        switches_agent0: trace.total_switches(crate::policy::Agent::Zero),
        response_cycle: trace.response_cycle.clone(),
    })
}

/// Runs co-adaptation for each threshold in a descending grid with agent 0
/// on threshold-gated improvement and agent 1 classical.
pub fn eta_band_scan(
    model: &FactoredCaMDP,
    init: &JointPolicy,
    etas: &[f64],
    template: &CoadaptConfig,
) -> Result<Vec<EtaOutcome>> {
    if etas.windows(2).any(|w| w[1] > w[0]) {
        return Err(CamdpError::InvalidArgument(
            "eta grid must be in descending order".into(),
        ));
    }
    etas.par_iter()
        .map(|&eta| scan_one(model, init, template, eta))
        .collect()
}

/// Collapses consecutive grid points with the same outcome into bands.
pub fn band_sequence(outcomes: &[EtaOutcome]) -> Vec<BandOutcome> {
    let mut out: Vec<BandOutcome> = Vec::new();
    for o in outcomes {
        if out.last() != Some(&o.outcome) {
            out.push(o.outcome.clone());
        }
    }
    out
}

/// Locates each outcome change of a scan by bisection down to a relative
/// width of `rel_tol`.
pub fn refine_band_edges(
    model: &FactoredCaMDP,
    init: &JointPolicy,
    template: &CoadaptConfig,
    outcomes: &[EtaOutcome],
    rel_tol: f64,
) -> Result<Vec<BandEdge>> {
    let mut edges = Vec::new();
    for pair in outcomes.windows(2) {
        let (hi, lo) = (&pair[0], &pair[1]);
        if hi.outcome == lo.outcome {
            continue;
        }
        let (mut upper, mut lower) = (hi.eta, lo.eta);
        let mut lower_outcome = lo.outcome.clone();
        while upper - lower > rel_tol * upper {
            let mid = 0.5 * (upper + lower);
            let o = scan_one(model, init, template, mid)?.outcome;
            if o == hi.outcome {
                upper = mid;
            } else {
                lower = mid;
                lower_outcome = o;
            }
        }
        edges.push(BandEdge {
            lower,
            upper,
            above: hi.outcome.clone(),
            below: lower_outcome,
        });
    }
    Ok(edges)
}
