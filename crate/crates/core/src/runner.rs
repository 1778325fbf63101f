//! Task execution and deterministic plain-text reports.
//!
//! A report starts with a `key: value` block for scripting, followed by a blank line and a
//! human-readable body. Nothing timing-dependent is written, so identical inputs give
//! byte-identical reports.

use std::fmt::Write as _;

use nalgebra::DVector;
use stostl_milp::Budget;
use thiserror::Error;

use crate::chance::DEFAULT_SCENARIO_CAP;
use crate::contracts::{
    check_compatibility, check_consistency, check_refinement, mode_keyword, Attempt, CheckConfig, Contract, Outcome, Verdict,
};
use crate::error::{EncodeError, ModelError};
use crate::models::{InitialState, SystemModel};
use crate::mpc::{run_many, synthesize_open_loop, MpcProblem, Objective, Plan};
use crate::parser::{Expectation, Project, Task, TaskKind};

/// Seed of simulations that name none and get none from the configuration.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    /// The project or configuration does not describe a runnable task.
    #[error("{0}")]
    Config(String),
    #[error("task `{task}`: {source}")]
    Encode {
        task: String,
        #[source]
        source: EncodeError,
    },
}

impl RunError {
    /// Whether the fault lies with the input rather than the tool.
    pub fn is_config(&self) -> bool {
        match self {
            RunError::Config(_) => true,
            RunError::Encode { source, .. } => matches!(
                source,
                EncodeError::ScenarioCap { .. }
                    | EncodeError::Unsupported { .. }
                    | EncodeError::HorizonTooShort { .. }
                    | EncodeError::ProbabilityEndpoint(_)
                    | EncodeError::Model(_)
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub budget: Budget,
    pub ladder: Vec<u32>,
    /// Overrides the seeds named in simulation tasks.
    pub seed: Option<u64>,
    /// Overrides the run count of simulation tasks.
    pub runs: Option<usize>,
    pub scenario_cap: usize,
    pub dump_lp: bool,
    pub csv: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            budget: Budget::default(),
            ladder: vec![1, 2, 4, 8],
            seed: None,
            runs: None,
            scenario_cap: DEFAULT_SCENARIO_CAP,
            dump_lp: false,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub name: String,
    pub text: String,
    /// `Some(met)` when the task declares an expectation.
    pub expectation_met: Option<bool>,
    /// Outcome of contract checks.
    pub outcome: Option<Outcome>,
    /// LP files as `(file name, contents)`.
    pub lp_files: Vec<(String, String)>,
    /// CSV traces as `(file name, contents)`.
    pub csv_files: Vec<(String, String)>,
}

fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.6}")
    }
}

fn vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| num(*x)).collect();
    format!("[{}]", parts.join(", "))
}

fn system<'a>(project: &'a Project, c: &Contract) -> Result<&'a SystemModel, RunError> {
    project
        .system(&c.system)
        .ok_or_else(|| RunError::Config(format!("contract `{}` names unknown system `{}`", c.name, c.system)))
}

fn contract<'a>(project: &'a Project, name: &str) -> Result<&'a Contract, RunError> {
    project
        .contract(name)
        .ok_or_else(|| RunError::Config(format!("unknown contract `{name}`")))
}

fn check_config(task: &Task, cfg: &RunConfig) -> CheckConfig {
    CheckConfig {
        ladder: cfg.ladder.clone(),
        budget: cfg.budget,
        steps: task.horizon,
        scenario_cap: cfg.scenario_cap,
        keep_lp: cfg.dump_lp,
    }
}

fn lp_files(task: &str, attempts: &[Attempt]) -> Vec<(String, String)> {
    attempts
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            a.lp.as_ref().map(|lp| {
                (
                    format!("{task}.{i}.{}.{}_{}.lp", a.query, mode_keyword(a.level.mode), a.level.segments),
                    lp.clone(),
                )
            })
        })
        .collect()
}

fn expectation_text(e: &Option<Expectation>) -> String {
    match e {
        None => "none".into(),
        Some(Expectation::Outcome(o)) => o.keyword().into(),
        Some(Expectation::MinRate(r)) => format!("rate >= {r}"),
    }
}

fn met_text(m: Option<bool>) -> &'static str {
    match m {
        None => "none",
        Some(true) => "met",
        Some(false) => "unmet",
    }
}

fn verdict_report(task: &Task, kind: &str, subjects: &[(&str, &str)], sys: &SystemModel, v: &Verdict) -> TaskReport {
    let expectation_met = match &task.expect {
        Some(Expectation::Outcome(o)) => Some(*o == v.outcome),
        Some(Expectation::MinRate(_)) => Some(false),
        None => None,
    };
    let mut s = String::new();
    let _ = writeln!(s, "task: {}", task.name);
    let _ = writeln!(s, "kind: {kind}");
    for (k, val) in subjects {
        let _ = writeln!(s, "{k}: {val}");
    }
    let _ = writeln!(s, "system: {}", sys.name);
    let _ = writeln!(s, "outcome: {}", v.outcome.keyword());
    match v.level {
        Some(l) => {
            let _ = writeln!(s, "level: {}", mode_keyword(l.mode));
            let _ = writeln!(s, "segments: {}", l.segments);
        }
        None => {
            let _ = writeln!(s, "level: none");
        }
    }
    let _ = writeln!(s, "queries: {}", v.attempts.len());
    let _ = writeln!(s, "expected: {}", expectation_text(&task.expect));
    let _ = writeln!(s, "expectation: {}", met_text(expectation_met));
    let _ = writeln!(s);
    let _ = writeln!(s, "{} of {} is {}.", kind, subjects.iter().map(|(_, n)| *n).collect::<Vec<_>>().join(" against "), v.outcome);
    let _ = writeln!(s, "Solver calls:");
    for (i, a) in v.attempts.iter().enumerate() {
        let _ = writeln!(
            s,
            "  {i}: query={} level={} segments={} status={} variables={} binaries={} rows={} nodes={} lp_iterations={}",
            a.query,
            mode_keyword(a.level.mode),
            a.level.segments,
            a.status.keyword(),
            a.variables,
            a.binaries,
            a.rows,
            a.nodes,
            a.lp_iterations
        );
    }
    if let Some(w) = &v.witness {
        let _ = writeln!(s, "Witness from `{}`:", w.query);
        let _ = writeln!(s, "  x0 = {}", vector(&w.x0));
        for (t, u) in w.inputs.iter().enumerate() {
            let _ = writeln!(s, "  u{t} = {}", vector(u));
        }
    }
    TaskReport {
        name: task.name.clone(),
        text: s,
        expectation_met,
        outcome: Some(v.outcome),
        lp_files: lp_files(&task.name, &v.attempts),
        csv_files: Vec::new(),
    }
}

fn mpc_problem(sys: &SystemModel, c: &Contract, horizon: usize, objective: &Objective, cfg: &RunConfig) -> Result<MpcProblem, RunError> {
    let mut p = MpcProblem::new(sys.clone(), c.clone(), horizon, objective.clone())
        .map_err(|e: ModelError| RunError::Config(format!("contract `{}`: {e}", c.name)))?;
    p.scenario_cap = cfg.scenario_cap;
    Ok(p)
}

fn initial_state(sys: &SystemModel) -> Result<DVector<f64>, RunError> {
    match &sys.x0 {
        InitialState::Fixed(x) => Ok(x.clone()),
        InitialState::Free { .. } => Err(RunError::Config(format!(
            "system `{}` needs a fixed `x0` for synthesis and simulation",
            sys.name
        ))),
    }
}

fn plan_report(task: &Task, c: &Contract, sys: &SystemModel, horizon: usize, plan: &Plan) -> TaskReport {
    let mut s = String::new();
    let _ = writeln!(s, "task: {}", task.name);
    let _ = writeln!(s, "kind: synthesize");
    let _ = writeln!(s, "contract: {}", c.name);
    let _ = writeln!(s, "system: {}", sys.name);
    let _ = writeln!(s, "horizon: {horizon}");
    let _ = writeln!(s, "status: {}", plan.status.keyword());
    let _ = writeln!(
        s,
        "objective: {}",
        plan.objective.map_or_else(|| "none".into(), num)
    );
    let _ = writeln!(s, "binaries: {}", plan.binaries);
    let _ = writeln!(s, "nodes: {}", plan.nodes);
    let expectation_met = match &task.expect {
        None => None,
        Some(_) => Some(false),
    };
    let _ = writeln!(s, "expected: {}", expectation_text(&task.expect));
    let _ = writeln!(s, "expectation: {}", met_text(expectation_met));
    let _ = writeln!(s);
    let _ = writeln!(s, "Open-loop plan for {} over {horizon} steps: {}.", c.name, plan.status.keyword());
    for (t, u) in plan.inputs.iter().enumerate() {
        let _ = writeln!(s, "  u{t} = {}", vector(u.as_slice()));
    }
    TaskReport {
        name: task.name.clone(),
        text: s,
        expectation_met,
        outcome: None,
        lp_files: Vec::new(),
        csv_files: Vec::new(),
    }
}

/// Runs one task of `project`.
pub fn run_task(project: &Project, task: &Task, cfg: &RunConfig) -> Result<TaskReport, RunError> {
    let enc_err = |source| RunError::Encode {
        task: task.name.clone(),
        source,
    };
    match &task.kind {
        TaskKind::Compatibility { contract: name } => {
            let c = contract(project, name)?;
            let sys = system(project, c)?;
            let v = check_compatibility(sys, c, &check_config(task, cfg)).map_err(enc_err)?;
            Ok(verdict_report(task, "compatibility", &[("contract", name)], sys, &v))
        }
        TaskKind::Consistency { contract: name } => {
            let c = contract(project, name)?;
            let sys = system(project, c)?;
            let v = check_consistency(sys, c, &check_config(task, cfg)).map_err(enc_err)?;
            Ok(verdict_report(task, "consistency", &[("contract", name)], sys, &v))
        }
        TaskKind::Refinement { refined, refines } => {
            let c1 = contract(project, refined)?;
            let c2 = contract(project, refines)?;
            let sys = system(project, c1)?;
            if c1.system != c2.system {
                return Err(RunError::Config(format!(
                    "refinement needs `{refined}` and `{refines}` over the same system"
                )));
            }
            let v = check_refinement(sys, c1, c2, &check_config(task, cfg)).map_err(enc_err)?;
            Ok(verdict_report(
                task,
                "refinement",
                &[("refined", refined), ("refines", refines)],
                sys,
                &v,
            ))
        }
        TaskKind::Synthesize {
            contract: name,
            horizon,
            objective,
        } => {
            let c = contract(project, name)?;
            let sys = system(project, c)?;
            let p = mpc_problem(sys, c, *horizon, objective, cfg)?;
            let x0 = initial_state(sys)?;
            let plan = synthesize_open_loop(&p, &x0, 0, None).map_err(enc_err)?;
            Ok(plan_report(task, c, sys, *horizon, &plan))
        }
        TaskKind::Simulate {
            contract: name,
            horizon,
            steps,
            runs,
            seed,
            objective,
            monitor,
        } => {
            let c = contract(project, name)?;
            let sys = system(project, c)?;
            initial_state(sys)?;
            let p = mpc_problem(sys, c, *horizon, objective, cfg)?;
            let seed = cfg.seed.or(*seed).unwrap_or(DEFAULT_SEED);
            let runs = cfg.runs.unwrap_or(*runs);
            let mut csv_files = Vec::new();
            let summary = run_many(&p, seed, runs, *steps, monitor.as_ref(), |trace| {
                if cfg.csv {
                    csv_files.push((format!("{}.seed{}.csv", task.name, trace.seed), trace.to_csv(sys)));
                }
            })
            .map_err(enc_err)?;
            let min_rate = summary.min_rate();
            let expectation_met = match &task.expect {
                None => None,
                Some(Expectation::MinRate(r)) => Some(min_rate.is_some_and(|m| m >= *r)),
                Some(Expectation::Outcome(_)) => Some(false),
            };
            let mut s = String::new();
            let _ = writeln!(s, "task: {}", task.name);
            let _ = writeln!(s, "kind: simulate");
            let _ = writeln!(s, "contract: {}", c.name);
            let _ = writeln!(s, "system: {}", sys.name);
            let _ = writeln!(s, "horizon: {horizon}");
            let _ = writeln!(s, "steps: {steps}");
            let _ = writeln!(s, "runs: {runs}");
            let _ = writeln!(s, "seed: {seed}");
            let _ = writeln!(s, "infeasible_steps: {}", summary.infeasible_steps);
            let _ = writeln!(s, "capped_steps: {}", summary.capped_steps);
            let _ = writeln!(s, "mean_cost: {}", num(summary.mean_cost));
            let _ = writeln!(s, "min_rate: {}", min_rate.map_or_else(|| "none".into(), num));
            let _ = writeln!(s, "expected: {}", expectation_text(&task.expect));
            let _ = writeln!(s, "expectation: {}", met_text(expectation_met));
            let _ = writeln!(s);
            let _ = writeln!(s, "Closed-loop simulation of {} with seeds {seed} to {}.", c.name, seed + runs.saturating_sub(1) as u64);
            if let Some(m) = monitor {
                let _ = writeln!(s, "Monitor `{m}` satisfaction rate by step:");
                for (t, r) in summary.monitor_rates.iter().enumerate() {
                    let _ = writeln!(s, "  step {}: {}", t + 1, num(*r));
                }
            }
            Ok(TaskReport {
                name: task.name.clone(),
                text: s,
                expectation_met,
                outcome: None,
                lp_files: Vec::new(),
                csv_files,
            })
        }
    }
}

/// Runs every task in order.
pub fn run_project(project: &Project, cfg: &RunConfig) -> Result<Vec<TaskReport>, RunError> {
    project.tasks.iter().map(|t| run_task(project, t, cfg)).collect()
}
