use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use camdp_core::improve::{improve_until_stable, switched_classes, SingleAgentRule};
use camdp_core::oracle::{
    band_sequence, refine_band_edges, reference_targets, CalibrationTarget,
};
use camdp_core::random::{random_small_model, rng};
use camdp_core::{
    action_values, brute_force_optimal, calibrate, check_ergodic, eta_band_scan, evaluate_direct,
    evaluate_iterative, greedy_improve, induced_chain, pi_alike_improve, revised_improve,
    run_coadapt, stationary_distribution, Agent, CoadaptConfig, FactoredCaMDP, ImproverSpec,
    JointPolicy, PiAlikeState, RewardMode, Schedule, ValueCriterion,
};

#[derive(Parser)]
#[command(name = "camdp", version, about = "Two-agent co-adaptive MDP toolkit")]
struct Cli {
    /// Model file (JSON). Defaults to the built-in two-agent example.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Override the model's discount factor.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Override the model's reward aggregation (product or sum).
    #[arg(long, global = true)]
    reward_mode: Option<RewardMode>,
    /// Write machine-readable output to this path.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Seed for random instances.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Direct,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Classical,
    Revised,
    Pialike,
}

#[derive(Clone, Copy, ValueEnum)]
enum Criterion {
    Gain,
    Discounted,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and report component-chain ergodicity.
    Validate,
    /// Evaluate a joint policy.
    Eval {
        /// Joint policy as "<pi0 digits>:<pi1 digits>".
        #[arg(long)]
        policy: String,
        #[arg(long, value_enum, default_value = "direct")]
        method: Method,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// One improvement step for one agent.
    Improve {
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        #[arg(long, value_enum, default_value = "classical")]
        mode: Mode,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Repeat until the agent's policy is stable (classical/revised).
        #[arg(long)]
        until_stable: bool,
    },
    /// Run both agents' improvement against each other.
    Coadapt {
        #[arg(long, default_value = "1111:1100")]
        init: String,
        #[arg(long, default_value = "simultaneous")]
        schedule: Schedule,
        /// classical | revised:<eta> | pialike:<eta>:<kappa>:<window>
        #[arg(long, default_value = "classical")]
        agent0: ImproverSpec,
        #[arg(long, default_value = "classical")]
        agent1: ImproverSpec,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
    },
    /// Score every joint policy.
    Enumerate {
        #[arg(long, value_enum, default_value = "gain")]
        criterion: Criterion,
        /// Score one state's discounted value instead of the stationary mean.
        #[arg(long)]
        state: Option<usize>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Fit reward mode and criterion to reference policy values.
    Calibrate {
        /// Targets as "<pi0>:<pi1>=<value>"; defaults to the built-in reference rows.
        #[arg(long = "target")]
        targets: Vec<String>,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Scan agent 0's switching threshold over a descending grid.
    EtaScan {
        #[arg(long, default_value = "1111:1100")]
        init: String,
        /// Comma-separated thresholds; overrides --from/--to/--steps.
        #[arg(long, value_delimiter = ',')]
        etas: Vec<f64>,
        #[arg(long, default_value_t = 1e-1)]
        from: f64,
        #[arg(long, default_value_t = 1e-5)]
        to: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Bisect each outcome change to this relative width.
        #[arg(long)]
        refine: Option<f64>,
        #[arg(long, default_value = "simultaneous")]
        schedule: Schedule,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
    },
    /// Write the built-in example model (or a random one) as JSON.
    Example {
        #[arg(long, default_value = "paper_section5.json")]
        out: PathBuf,
        #[arg(long)]
        random: bool,
    },
}

fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn load_model(cli: &Cli) -> Result<FactoredCaMDP> {
    let mut model = match &cli.model {
        Some(path) => FactoredCaMDP::load(path)
            .with_context(|| format!("loading {}", path.display()))?,
        None => FactoredCaMDP::builtin_example(),
    };
    if let Some(g) = cli.gamma {
        model = model.with_gamma(g)?;
    }
    if let Some(mode) = cli.reward_mode {
        model = model.with_reward_mode(mode);
    }
    Ok(model)
}

fn write_csv(path: &Option<PathBuf>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Example { out, random } => {
            let model = if *random {
                random_small_model(&mut rng(cli.seed))
            } else {
                load_model(cli)?
            };
            write_file(out, &model.to_json()?)?;
            println!("wrote {}", out.display());
        }
        Command::Validate => {
            let model = load_model(cli)?;
            let d = model.dims();
            println!(
                "ok: |S0|={} |Ss|={} |S1|={} |A0|={} |A1|={} gamma={} reward={}",
                d.n0, d.ns, d.n1, d.m0, d.m1, model.gamma, model.reward_mode
            );
            let to_m = |rows: &Vec<Vec<f64>>| {
                nalgebra::DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
            };
            for (a, p) in model.p0.iter().enumerate() {
                println!("P0[{a}]: {:?}", check_ergodic(&to_m(p))?);
            }
            for (a0, row) in model.ps.iter().enumerate() {
                for (a1, p) in row.iter().enumerate() {
                    println!("Ps[{a0}][{a1}]: {:?}", check_ergodic(&to_m(p))?);
                }
            }
            for (a, p) in model.p1.iter().enumerate() {
                println!("P1[{a}]: {:?}", check_ergodic(&to_m(p))?);
            }
        }
        Command::Eval { policy, method, tol } => {
            let model = load_model(cli)?;
            let dims = model.dims();
            let jp = JointPolicy::parse(&dims, policy)?;
            let chain = induced_chain(&model, &jp)?;
            let res = match method {
                Method::Direct => evaluate_direct(&chain, model.gamma)?,
                Method::Iterative => evaluate_iterative(&chain, model.gamma, *tol, 10_000_000)?,
            };
            println!("policy {jp}  gamma={} reward={}", model.gamma, model.reward_mode);
            println!("{:>5} {:>3} {:>3} {:>3} {:>12}", "state", "s0", "ss", "s1", "value");
            let mut csv = String::from("state_index,s0,ss,s1,value\n");
            for s in dims.states() {
                let v = res.values[s.flat_index];
                println!("{:>5} {:>3} {:>3} {:>3} {:>12}", s.flat_index, s.s0, s.ss, s.s1, sig6(v));
                csv.push_str(&format!("{},{},{},{},{}\n", s.flat_index, s.s0, s.ss, s.s1, v));
            }
            let w = stationary_distribution(&chain.p)?;
            let g = w.dot(&chain.r);
            println!("gain {}", sig6(g));
            println!("stationary mean value {}", sig6(w.dot(&res.values)));
            write_csv(&cli.csv, &csv)?;
        }
        Command::Improve { policy, agent, mode, eta, kappa, window, until_stable } => {
            let model = load_model(cli)?;
            let dims = model.dims();
            let agent = Agent::from_index(*agent)?;
            let jp = JointPolicy::parse(&dims, policy)?;
            if *until_stable {
                let rule = match mode {
                    Mode::Classical => SingleAgentRule::Classical,
                    Mode::Revised => SingleAgentRule::Revised(*eta),
                    Mode::Pialike => bail!("--until-stable supports classical and revised only"),
                };
                let (stable, rounds) = improve_until_stable(&model, &jp, agent, rule, 10_000)?;
                println!("stable after {rounds} rounds: {stable}");
                return Ok(ExitCode::SUCCESS);
            }
            let chain = induced_chain(&model, &jp)?;
            let values = evaluate_direct(&chain, model.gamma)?.values;
            let report = action_values(&model, &jp, &values, agent)?;
            let current = jp.get(agent);
            let new = match mode {
                Mode::Classical => greedy_improve(&report, current).0,
                Mode::Revised => revised_improve(&report, current, *eta).0,
                Mode::Pialike => {
                    let state = PiAlikeState::new(current.len(), *eta, *kappa, *window)?;
                    pi_alike_improve(&report, current, state).0
                }
            };
            println!("{:>5} {:>7} {:>5} {:>12}", "class", "current", "best", "advantage");
            let mut csv = String::from("class,current_action,best_action,advantage\n");
            for c in &report.classes {
                println!(
                    "{:>5} {:>7} {:>5} {:>12}",
                    c.class, c.current_action, c.best_action, sig6(c.advantage)
                );
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    c.class, c.current_action, c.best_action, c.advantage
                ));
            }
            let next = jp.with(&dims, new)?;
            println!("switched classes {:?}", switched_classes(current, next.get(agent)));
            println!("next {next}");
            write_csv(&cli.csv, &csv)?;
        }
        Command::Coadapt { init, schedule, agent0, agent1, max_iters } => {
            let model = load_model(cli)?;
            let jp = JointPolicy::parse(&model.dims(), init)?;
            let mut config = CoadaptConfig::for_model(&model)
                .with_schedule(*schedule)
                .with_improvers(*agent0, *agent1);
            config.max_iters = *max_iters;
            let trace = run_coadapt(&model, &jp, &config)?;
            println!(
                "{:>4} {:>9} {:>11} {:>12} {:>4} {:>4}",
                "iter", "policy_no", "digits", "gain", "sw0", "sw1"
            );
            for r in &trace.records {
                println!(
                    "{:>4} {:>9} {:>11} {:>12} {:>4} {:>4}",
                    r.iter,
                    r.joint.number(),
                    r.joint.digits(),
                    r.gain.map(sig6).unwrap_or_default(),
                    r.switches[0].len(),
                    r.switches[1].len()
                );
            }
            println!("status {}  final {}", trace.status.label(), trace.final_policy());
            if let Some(c) = &trace.response_cycle {
                println!("response cycle {c}");
            }
            write_csv(&cli.csv, &trace.to_csv())?;
            return Ok(ExitCode::from(trace.status.exit_code() as u8));
        }
        Command::Enumerate { criterion, state, top } => {
            let model = load_model(cli)?;
            let criterion = match (criterion, state) {
                (Criterion::Gain, _) => ValueCriterion::Gain,
                (Criterion::Discounted, None) => {
                    ValueCriterion::StationaryMean { gamma: model.gamma }
                }
                (Criterion::Discounted, Some(s)) => {
                    ValueCriterion::AtState { gamma: model.gamma, state: *s }
                }
            };
            let res = brute_force_optimal(&model, criterion)?;
            let mut ranked: Vec<_> = res.table.iter().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.number().cmp(&b.0.number())));
            println!("criterion {criterion}, reward {}", model.reward_mode);
            for (jp, v) in ranked.iter().take(*top) {
                println!("{:>6} {:>11} {:>12}", jp.number(), jp.digits(), sig6(*v));
            }
            println!("best {} value {}", res.best, sig6(res.value));
            write_csv(&cli.csv, &res.to_csv())?;
        }
        Command::Calibrate { targets, report } => {
            let model = load_model(cli)?;
            let targets = if targets.is_empty() {
                reference_targets()
            } else {
                targets.iter().map(|t| parse_target(t)).collect::<Result<_>>()?
            };
            let rep = calibrate(&model, &targets)?;
            println!("{:>8} {:>28} {:>12} {:>8}", "reward", "criterion", "max_error", "ordered");
            let mut csv = String::from("reward_mode,criterion,max_error,ordering_matches\n");
            for e in &rep.entries {
                println!(
                    "{:>8} {:>28} {:>12} {:>8}",
                    e.reward_mode.to_string(),
                    e.criterion.to_string(),
                    sig6(e.max_error),
                    e.ordering_matches
                );
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    e.reward_mode, e.criterion, e.max_error, e.ordering_matches
                ));
            }
            println!(
                "best: reward={} criterion={} max_error={}",
                rep.best_reward_mode,
                rep.best_criterion,
                sig6(rep.best_max_error)
            );
            for (t, v) in rep.targets.iter().zip(&rep.best().values) {
                println!("  {} target {} computed {}", t.policy, sig6(t.value), sig6(*v));
            }
            if let Some(path) = report {
                write_file(path, &rep.to_json()?)?;
            }
            write_csv(&cli.csv, &csv)?;
        }
        Command::EtaScan { init, etas, from, to, steps, refine, schedule, max_iters } => {
            let model = load_model(cli)?;
            let jp = JointPolicy::parse(&model.dims(), init)?;
            let grid: Vec<f64> = if etas.is_empty() {
                if !(*from > *to && *to > 0.0 && *steps >= 2) {
                    bail!("--from must exceed --to > 0 and --steps must be at least 2");
                }
                let ratio = (to / from).powf(1.0 / (*steps as f64 - 1.0));
                (0..*steps).map(|k| from * ratio.powi(k as i32)).chain([0.0]).collect()
            } else {
                etas.clone()
            };
            let mut template = CoadaptConfig::for_model(&model).with_schedule(*schedule);
            template.max_iters = *max_iters;
            let outcomes = eta_band_scan(&model, &jp, &grid, &template)?;
            let mut csv = String::from("eta,outcome,final_policy,iterations,switches_agent0\n");
            for o in &outcomes {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    o.eta, o.outcome, o.final_policy, o.iterations, o.switches_agent0
                ));
            }
            println!("bands (descending eta):");
            let mut prev = None;
            for o in &outcomes {
                if prev.as_ref() != Some(&o.outcome) {
                    let resp = o
                        .response_cycle
                        .as_ref()
                        .map(|c| format!("  responses {c}"))
                        .unwrap_or_default();
                    println!("  from eta {:>12}: {}{resp}", sig6(o.eta), o.outcome);
                    prev = Some(o.outcome.clone());
                }
            }
            println!("{} bands", band_sequence(&outcomes).len());
            if let Some(tol) = refine {
                for e in refine_band_edges(&model, &jp, &template, &outcomes, *tol)? {
                    println!(
                        "  edge in [{}, {}]: {} -> {}",
                        sig6(e.lower),
                        sig6(e.upper),
                        e.above,
                        e.below
                    );
                }
            }
            write_csv(&cli.csv, &csv)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_target(text: &str) -> Result<CalibrationTarget> {
    let (policy, value) = text
        .split_once('=')
        .with_context(|| format!("target {text:?} is not <pi0>:<pi1>=<value>"))?;
    let value: f64 = value
        .trim()
        .parse()
        .with_context(|| format!("target {text:?} has a bad value"))?;
    Ok(CalibrationTarget::new(policy.trim(), value))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
