//! Solver library for co-adaptive MDPs: two-agent Markov decision processes
//! whose state factors into an agent-0 component, a shared component and an
//! agent-1 component, with transitions given by a Kronecker product of the
//! three component models.
//!
//! The crate covers model construction and validation ([`model`]), the
//! per-agent policy space and its canonical numbering ([`policy`]), exact
//! and iterative evaluation together with stationary/average-reward analysis
//! ([`eval`]), classical, threshold-gated and windowed policy improvement
//! ([`improve`]), the two-agent mutual-learning loop ([`coadapt`]) and
//! brute-force ground truth ([`oracle`]).

pub mod coadapt;
pub mod error;
pub mod eval;
pub mod improve;
pub mod kron;
pub mod markov;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod random;

pub use coadapt::{
    detect_cycle, run_coadapt, CoadaptConfig, CoadaptStatus, CoadaptTrace, Cycle, ImproverSpec,
    Schedule,
};
pub use error::{CamdpError, Result};
pub use eval::{
    cesaro_gain, evaluate_direct, evaluate_iterative, gain, induced_chain, stationary_distribution,
    EvalMethod, EvalResult, InducedChain,
};
pub use improve::{
    action_values, greedy_improve, pi_alike_improve, revised_improve, value_loss_bound,
    AdvantageReport, PiAlikeState,
};
pub use kron::{kron, kron3};
pub use markov::{check_ergodic, Ergodicity};
pub use model::{validate, Dims, FactoredCaMDP, JointState, RewardMode, ValidationReport};
pub use oracle::{brute_force_optimal, calibrate, eta_band_scan, ValueCriterion};
pub use policy::{enumerate_all, policy_number, Agent, AgentPolicy, JointPolicy, PolicyDomain};
