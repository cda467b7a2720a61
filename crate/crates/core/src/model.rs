//! Factored two-agent model: component transition and reward tables, the
//! augmented state space and model validation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CamdpError, Result};
use crate::kron::kron3_vec;

/// Absolute tolerance on each probability row sum.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// How the three component rewards combine into the reward of one augmented
/// transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// `R0 * Rs * R1`, the literal Kronecker reading.
    Product,
    /// `R0 + Rs + R1`.
    Sum,
}

impl RewardMode {
    pub const ALL: [RewardMode; 2] = [RewardMode::Product, RewardMode::Sum];

    #[inline]
    pub fn combine(self, r0: f64, rs: f64, r1: f64) -> f64 {
        match self {
            RewardMode::Product => r0 * rs * r1,
            RewardMode::Sum => r0 + rs + r1,
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Product => "product",
            RewardMode::Sum => "sum",
        })
    }
}

impl FromStr for RewardMode {
    type Err = CamdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "product" | "prod" => Ok(RewardMode::Product),
            "sum" => Ok(RewardMode::Sum),
            other => Err(CamdpError::Parse(format!("unknown reward mode `{other}`"))),
        }
    }
}

/// State and action set sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n0: usize,
    pub ns: usize,
    pub n1: usize,
    pub m0: usize,
    pub m1: usize,
}

impl Dims {
    /// Number of augmented states `n0 * ns * n1`.
    #[inline]
    pub fn n_states(&self) -> usize {
        self.n0 * self.ns * self.n1
    }

    #[inline]
    pub fn state(&self, s0: usize, ss: usize, s1: usize) -> JointState {
        JointState {
            s0,
            ss,
            s1,
            flat_index: (s0 * self.ns + ss) * self.n1 + s1,
        }
    }

    #[inline]
    pub fn state_at(&self, flat_index: usize) -> JointState {
        let s1 = flat_index % self.n1;
        let rest = flat_index / self.n1;
        JointState {
            s0: rest / self.ns,
            ss: rest % self.ns,
            s1,
            flat_index,
        }
    }

    /// All augmented states in flat-index order.
    pub fn states(&self) -> impl Iterator<Item = JointState> + '_ {
        (0..self.n_states()).map(move |i| self.state_at(i))
    }
}

/// One augmented state. States are ordered lexicographically with `s0`
/// major and `s1` minor, matching the factor order `P0 ⊗ Ps ⊗ P1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointState {
    pub s0: usize,
    pub ss: usize,
    pub s1: usize,
    pub flat_index: usize,
}

/// A co-adaptive MDP in factored form.
///
/// Table layouts: `p0[a0][s0][s0']`, `ps[a0][a1][ss][ss']`, `p1[a1][s1][s1']`
/// and the reward tables in the same shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredCaMDP {
    pub n0: usize,
    pub ns: usize,
    pub n1: usize,
    pub m0: usize,
    pub m1: usize,
    pub gamma: f64,
    pub reward_mode: RewardMode,
    #[serde(rename = "P0")]
    pub p0: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Ps")]
    pub ps: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "P1")]
    pub p1: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R0")]
    pub r0: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Rs")]
    pub rs: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "R1")]
    pub r1: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    NotStochastic,
    NegativeEntry,
    DimensionMismatch,
    BadGamma,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Table name as it appears in the model file (`P0`, `Rs`, `gamma`, ...).
    pub table: String,
    pub indices: Vec<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} in {}", self.kind, self.table)?;
        if !self.indices.is_empty() {
            let idx: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
            write!(f, "[{}]", idx.join("]["))?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, table: &str, indices: &[usize], detail: String) {
        self.violations.push(Violation {
            kind,
            table: table.to_string(),
            indices: indices.to_vec(),
            detail,
        });
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks stochasticity, shapes and the discount factor.
pub fn validate(model: &FactoredCaMDP) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !(model.gamma > 0.0 && model.gamma < 1.0) {
        report.push(
            ViolationKind::BadGamma,
            "gamma",
            &[],
            format!("{} is outside the open interval (0, 1)", model.gamma),
        );
    }
    for (name, n) in [
        ("n0", model.n0),
        ("ns", model.ns),
        ("n1", model.n1),
        ("m0", model.m0),
        ("m1", model.m1),
    ] {
        if n == 0 {
            report.push(
                ViolationKind::DimensionMismatch,
                name,
                &[],
                "must be positive".into(),
            );
        }
    }
    let (n0, ns, n1, m0, m1) = (model.n0, model.ns, model.n1, model.m0, model.m1);

    let mut rows = Vec::new();
    collect_rows3(&model.p0, "P0", [m0, n0, n0], &mut report, &mut rows);
    collect_rows4(&model.ps, "Ps", [m0, m1, ns, ns], &mut report, &mut rows);
    collect_rows3(&model.p1, "P1", [m1, n1, n1], &mut report, &mut rows);
    for (table, idx, row) in rows {
        check_prob_row(table, &idx, row, &mut report);
    }

    let mut rows = Vec::new();
    collect_rows3(&model.r0, "R0", [m0, n0, n0], &mut report, &mut rows);
    collect_rows4(&model.rs, "Rs", [m0, m1, ns, ns], &mut report, &mut rows);
    collect_rows3(&model.r1, "R1", [m1, n1, n1], &mut report, &mut rows);
    for (table, idx, row) in rows {
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                let mut at = idx.clone();
                at.push(j);
                report.push(ViolationKind::NonFinite, table, &at, format!("reward {x}"));
            }
        }
    }
    report
}

type RowRef<'a> = (&'static str, Vec<usize>, &'a [f64]);

fn dim_check(
    report: &mut ValidationReport,
    table: &'static str,
    at: &[usize],
    got: usize,
    want: usize,
) -> bool {
    if got != want {
        report.push(
            ViolationKind::DimensionMismatch,
            table,
            at,
            format!("expected length {want}, found {got}"),
        );
        false
    } else {
        true
    }
}

fn collect_rows3<'a>(
    t: &'a [Vec<Vec<f64>>],
    name: &'static str,
    shape: [usize; 3],
    report: &mut ValidationReport,
    out: &mut Vec<RowRef<'a>>,
) {
    if !dim_check(report, name, &[], t.len(), shape[0]) {
        return;
    }
    for (a, mat) in t.iter().enumerate() {
        if !dim_check(report, name, &[a], mat.len(), shape[1]) {
            continue;
        }
        for (i, row) in mat.iter().enumerate() {
            if dim_check(report, name, &[a, i], row.len(), shape[2]) {
                out.push((name, vec![a, i], row));
            }
        }
    }
}

fn collect_rows4<'a>(
    t: &'a [Vec<Vec<Vec<f64>>>],
    name: &'static str,
    shape: [usize; 4],
    report: &mut ValidationReport,
    out: &mut Vec<RowRef<'a>>,
) {
    if !dim_check(report, name, &[], t.len(), shape[0]) {
        return;
    }
    for (a0, block) in t.iter().enumerate() {
        if !dim_check(report, name, &[a0], block.len(), shape[1]) {
            continue;
        }
        for (a1, mat) in block.iter().enumerate() {
            if !dim_check(report, name, &[a0, a1], mat.len(), shape[2]) {
                continue;
            }
            for (i, row) in mat.iter().enumerate() {
                if dim_check(report, name, &[a0, a1, i], row.len(), shape[3]) {
                    out.push((name, vec![a0, a1, i], row));
                }
            }
        }
    }
}

fn check_prob_row(table: &'static str, idx: &[usize], row: &[f64], report: &mut ValidationReport) {
    for (j, &x) in row.iter().enumerate() {
        if x < 0.0 {
            let mut at = idx.to_vec();
            at.push(j);
            report.push(ViolationKind::NegativeEntry, table, &at, format!("entry {x}"));
        }
    }
    let sum: f64 = row.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > STOCHASTIC_TOL {
        report.push(
            ViolationKind::NotStochastic,
            table,
            idx,
            format!("row sums to {sum}"),
        );
    }
}

fn renormalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
}

impl FactoredCaMDP {
    /// Validates the model and renormalizes every probability row so that it
    /// sums to one exactly (up to rounding).
    pub fn validated(mut self) -> Result<Self> {
        let report = validate(&self);
        if !report.is_ok() {
            return Err(CamdpError::InvalidModel(report));
        }
        self.p0.iter_mut().flatten().for_each(|r| renormalize(r));
        self.ps
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|r| renormalize(r));
        self.p1.iter_mut().flatten().for_each(|r| renormalize(r));
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: FactoredCaMDP = serde_json::from_str(text)?;
        model.validated()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n0: self.n0,
            ns: self.ns,
            n1: self.n1,
            m0: self.m0,
            m1: self.m1,
        }
    }

    pub fn n_states(&self) -> usize {
        self.dims().n_states()
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(CamdpError::InvalidArgument(format!(
                "gamma {gamma} is outside (0, 1)"
            )));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_reward_mode(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    /// Successor distribution and expected one-step reward of augmented
    /// state `s` when agent 0 plays `a0` and agent 1 plays `a1`.
    ///
    /// The row is `P0[a0][s0,:] ⊗ Ps[a0][a1][ss,:] ⊗ P1[a1][s1,:]`.
    pub fn transition_row(&self, s: JointState, a0: usize, a1: usize) -> (Vec<f64>, f64) {
        let row0 = &self.p0[a0][s.s0];
        let rows = &self.ps[a0][a1][s.ss];
        let row1 = &self.p1[a1][s.s1];
        let probs = kron3_vec(row0, rows, row1);

        let rw0 = &self.r0[a0][s.s0];
        let rws = &self.rs[a0][a1][s.ss];
        let rw1 = &self.r1[a1][s.s1];
        let mut expected = 0.0;
        let mut k = 0;
        for t0 in 0..self.n0 {
            for ts in 0..self.ns {
                for t1 in 0..self.n1 {
                    expected += probs[k] * self.reward_mode.combine(rw0[t0], rws[ts], rw1[t1]);
                    k += 1;
                }
            }
        }
        (probs, expected)
    }

    /// The two-agent example with two states per component and two actions
    /// per agent used throughout the documentation and tests.
    pub fn builtin_example() -> Self {
        let m = |a: [[f64; 2]; 2]| a.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        FactoredCaMDP {
            n0: 2,
            ns: 2,
            n1: 2,
            m0: 2,
            m1: 2,
            gamma: 0.98,
            reward_mode: RewardMode::Product,
            p0: vec![
                m([[0.8229, 0.1771], [0.7826, 0.2174]]),
                m([[0.6406, 0.3594], [0.4919, 0.5081]]),
            ],
            ps: vec![
                vec![
                    m([[0.5821, 0.4179], [0.3839, 0.6161]]),
                    m([[0.1838, 0.8162], [0.5686, 0.4314]]),
                ],
                vec![
                    m([[0.6990, 0.3010], [0.6169, 0.3831]]),
                    m([[0.3448, 0.6552], [0.6432, 0.3568]]),
                ],
            ],
            p1: vec![
                m([[0.8022, 0.1978], [0.5396, 0.4604]]),
                m([[0.4083, 0.5917], [0.5815, 0.4185]]),
            ],
            r0: vec![
                m([[0.1565, 0.1769], [0.1909, 0.1425]]),
                m([[0.0520, 0.2813], [0.1530, 0.1803]]),
            ],
            rs: vec![
                vec![
                    m([[0.2136, 0.1197], [0.1533, 0.1800]]),
                    m([[0.3047, 0.0286], [0.0895, 0.2438]]),
                ],
                vec![
                    m([[0.0077, 0.3257], [0.1378, 0.1955]]),
                    m([[0.2806, 0.0527], [0.1625, 0.1708]]),
                ],
            ],
            r1: vec![
                m([[0.0190, 0.3144], [0.3120, 0.0213]]),
                m([[0.1878, 0.1455], [0.0450, 0.2883]]),
            ],
        }
    }
}
