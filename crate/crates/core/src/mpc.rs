//! Stochastic model predictive control from a contract.
//!
//! Each solve minimizes a stage cost over the horizon subject to the inner encoding of the
//! canonical guarantee with the initial state fixed to the measured one. In closed loop the
//! guarantee is re-anchored at every replan instant and only the first input is applied.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stostl_milp::{solve, AffineExpr, Budget, ObjSense, Sense, SolveStatus};

use crate::chance::{expected_state, Affine, ApproxLevel, DEFAULT_SCENARIO_CAP};
use crate::contracts::Contract;
use crate::encoder::{encode, exact_holds, EncodeOptions, Encoding};
use crate::error::{EncodeError, ModelError};
use crate::formula::{ChancePredicate, Formula, LinExpr, Signal};
use crate::models::{simulate, InitialState, SystemModel};

/// Stage cost `sum_t linear(E[x_t], u_t) + sum_i c_i |e_i(E[x_t], u_t)|` over `t = 0..H-1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub linear: LinExpr,
    /// Weighted absolute values; weights must be nonnegative.
    pub abs_terms: Vec<(f64, LinExpr)>,
}

#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub system: SystemModel,
    pub contract: Contract,
    pub horizon: usize,
    pub objective: Objective,
    pub level: ApproxLevel,
    pub budget: Budget,
    pub scenario_cap: usize,
}

impl MpcProblem {
    /// Checks that the assumption is a conjunction of plain constraints on the initial state.
    pub fn new(system: SystemModel, contract: Contract, horizon: usize, objective: Objective) -> Result<Self, ModelError> {
        check_polyhedral(&contract.assume)?;
        if let Some((c, _)) = objective.abs_terms.iter().find(|(c, _)| *c < 0.0) {
            return Err(ModelError::Invalid(format!(
                "absolute-value weight {c} is negative; only convex costs are supported"
            )));
        }
        let need = contract.guarantee.horizon() as usize;
        if horizon < need.max(1) {
            return Err(ModelError::Invalid(format!(
                "horizon {horizon} is shorter than the guarantee horizon {need}"
            )));
        }
        Ok(Self {
            system,
            contract,
            horizon,
            objective,
            level: ApproxLevel::under(1),
            budget: Budget {
                max_nodes: 20_000,
                max_seconds: 30.0,
            },
            scenario_cap: DEFAULT_SCENARIO_CAP,
        })
    }
}

fn check_polyhedral(f: &Formula) -> Result<(), ModelError> {
    match f {
        Formula::And(a, b) => {
            check_polyhedral(a)?;
            check_polyhedral(b)
        }
        Formula::Atom(p) if p.deterministic && p.mu.terms.iter().all(|(s, _)| matches!(s, Signal::State(_))) => Ok(()),
        other => Err(ModelError::Invalid(format!(
            "assumption `{other}` is not a conjunction of constraints on the initial state"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Solved,
    /// The assumption does not hold at the measured state, so every input satisfies the guarantee.
    Vacuous,
    Infeasible,
    CapExceeded,
}

impl PlanStatus {
    pub fn keyword(&self) -> &'static str {
        match self {
            PlanStatus::Solved => "solved",
            PlanStatus::Vacuous => "vacuous",
            PlanStatus::Infeasible => "infeasible",
            PlanStatus::CapExceeded => "cap_exceeded",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub status: PlanStatus,
    /// Inputs `u_0 .. u_{H-1}`; empty unless solved or vacuous.
    pub inputs: Vec<DVector<f64>>,
    pub objective: Option<f64>,
    pub decision: Vec<f64>,
    pub binaries: usize,
    pub nodes: usize,
}

/// Adds the stage cost to the encoding and returns the objective expression.
fn objective_expr(enc: &mut Encoding, sys: &SystemModel, obj: &Objective, horizon: usize, cap: usize) -> Result<AffineExpr, EncodeError> {
    let layout = enc.layout;
    let n = layout.len();
    let mut total = AffineExpr::constant(0.0);
    let stage = |e: &LinExpr, x: &crate::chance::AffineMap, t: usize| -> Affine {
        let mut a = Affine::zero(n);
        a.constant = e.constant;
        for (s, c) in &e.terms {
            match s {
                Signal::State(i) => {
                    let r = x.row(*i);
                    a.coef += r.coef * *c;
                    a.constant += r.constant * c;
                }
                Signal::Input(i) => a.coef[layout.u(t, *i)] += c,
                _ => {}
            }
        }
        a
    };
    for t in 0..horizon {
        let x = expected_state(sys, &layout, t, cap)?;
        let lin = stage(&obj.linear, &x, t);
        let e = enc.decision_expr(&lin, sys)?;
        total.add_scaled(&e, 1.0);
        for (j, (w, term)) in obj.abs_terms.iter().enumerate() {
            let a = stage(term, &x, t);
            let e = enc.decision_expr(&a, sys)?;
            let (lo, hi) = enc.model.expr_range(&e);
            let v = enc.model.add_continuous(format!("cost_abs{j}_{t}"), 0.0, lo.abs().max(hi.abs()))?;
            for sign in [1.0, -1.0] {
                let mut row = e.scaled(sign);
                row.add_term(v, -1.0);
                enc.model.add_row(format!("cost_abs{j}_{t}"), &row, Sense::Le, 0.0)?;
            }
            total.add_term(v, *w);
        }
    }
    Ok(total.compacted())
}

/// One open-loop solve from the measured state `x` at absolute step `t`.
pub fn synthesize_open_loop(p: &MpcProblem, x: &DVector<f64>, t: usize, last_mode: Option<usize>) -> Result<Plan, EncodeError> {
    let sys = p.system.shifted(t, x.clone(), last_mode);
    let canonical = p.contract.canonicalize();
    let vacuous = {
        let nnf = p.contract.assume.to_nnf();
        let layout = crate::chance::Layout {
            nx: sys.nx,
            nu: sys.nu,
            steps: 1,
        };
        let mut d = vec![0.0; layout.len()];
        d[..sys.nx].copy_from_slice(x.as_slice());
        !exact_holds(&sys, &nnf, &layout, &d, 0.0, p.scenario_cap)?
    };
    let steps = p.horizon.max(canonical.guarantee.horizon() as usize + 1);
    let opts = EncodeOptions {
        level: p.level,
        steps: Some(steps),
        scenario_cap: p.scenario_cap,
    };
    let mut enc = encode(&sys, &canonical.guarantee, &opts)?;
    let obj = objective_expr(&mut enc, &sys, &p.objective, p.horizon, p.scenario_cap)?;
    enc.model.set_objective(ObjSense::Minimize, obj);
    // every input coordinate must exist so the plan is fully defined
    for t in 0..p.horizon {
        for i in 0..sys.nu {
            let mut a = Affine::zero(enc.layout.len());
            a.coef[enc.layout.u(t, i)] = 1.0;
            enc.decision_expr(&a, &sys)?;
        }
    }
    let res = solve(&enc.model, &p.budget)?;
    let (status, values, objective) = match res.status {
        SolveStatus::Feasible { values, objective } => (PlanStatus::Solved, Some(values), Some(objective)),
        SolveStatus::CapExceeded { incumbent: Some((v, o)) } => (PlanStatus::Solved, Some(v), Some(o)),
        SolveStatus::CapExceeded { incumbent: None } => (PlanStatus::CapExceeded, None, None),
        SolveStatus::Infeasible => (PlanStatus::Infeasible, None, None),
    };
    let status = if vacuous && status == PlanStatus::Solved { PlanStatus::Vacuous } else { status };
    let (inputs, decision) = match &values {
        Some(v) => {
            let d = enc.decision_values(v, &sys);
            let inputs = (0..p.horizon)
                .map(|t| DVector::from_iterator(sys.nu, (0..sys.nu).map(|i| d[enc.layout.u(t, i)])))
                .collect();
            (inputs, d)
        }
        None => (Vec::new(), Vec::new()),
    };
    Ok(Plan {
        status,
        inputs,
        objective,
        decision,
        binaries: enc.model.num_binaries(),
        nodes: res.stats.nodes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    /// Noise sample applied at this step (coefficient or predicate noise).
    pub noise: DVector<f64>,
    pub mode: Option<usize>,
    pub status: PlanStatus,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub seed: u64,
    pub steps: Vec<TraceStep>,
    /// States `x_0 .. x_N`.
    pub states: Vec<DVector<f64>>,
}

impl ClosedLoopTrace {
    pub fn to_csv(&self, sys: &SystemModel) -> String {
        let mut out = String::from("step");
        for i in 0..sys.nx {
            let _ = write!(out, ",x{}", i + 1);
        }
        for i in 0..sys.nu {
            let _ = write!(out, ",u{}", i + 1);
        }
        out.push_str(",mode,status,objective\n");
        for s in &self.steps {
            let _ = write!(out, "{}", s.step);
            for v in s.state.iter().chain(s.input.iter()) {
                let _ = write!(out, ",{v}");
            }
            let mode = s.mode.map(|m| (m + 1).to_string()).unwrap_or_default();
            let obj = s.objective.map(|o| o.to_string()).unwrap_or_default();
            let _ = writeln!(out, ",{mode},{},{obj}", s.status.keyword());
        }
        out
    }
}

fn clamp_input(sys: &SystemModel, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(sys.nu, u.iter().zip(&sys.u_bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)))
}

/// Closed-loop run of `steps` replans against a plant sampled with `seed`. When a solve
/// fails, the next input of the last successful plan is applied (zero once it runs out).
pub fn run_receding_horizon(p: &MpcProblem, seed: u64, steps: usize) -> Result<ClosedLoopTrace, EncodeError> {
    let x0 = match &p.system.x0 {
        InitialState::Fixed(x) => x.clone(),
        InitialState::Free { .. } => {
            return Err(ModelError::Invalid("closed-loop runs need a fixed initial state".into()).into())
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.clone();
    let mut states = vec![x0];
    let mut trace = Vec::with_capacity(steps);
    let mut fallback: Vec<DVector<f64>> = Vec::new();
    let mut fallback_pos = 0;
    let mut last_mode = None;
    for t in 0..steps {
        let plan = synthesize_open_loop(p, &x, t, last_mode)?;
        let u = match plan.status {
            PlanStatus::Solved | PlanStatus::Vacuous => {
                fallback = plan.inputs.clone();
                fallback_pos = 1;
                plan.inputs[0].clone()
            }
            _ => {
                let u = fallback
                    .get(fallback_pos)
                    .cloned()
                    .unwrap_or_else(|| DVector::zeros(p.system.nu));
                fallback_pos += 1;
                clamp_input(&p.system, &u)
            }
        };
        let plant = p.system.shifted(t, x.clone(), last_mode);
        let run = simulate(&plant, &x, std::slice::from_ref(&u), &mut rng)?;
        let next = run.states[1].clone();
        let mode = run.modes.first().copied();
        trace.push(TraceStep {
            step: t,
            state: x.clone(),
            input: u,
            noise: run.noise.first().cloned().unwrap_or_else(|| DVector::zeros(0)),
            mode,
            status: plan.status,
            objective: plan.objective,
        });
        if mode.is_some() {
            last_mode = mode;
        }
        x = next;
        states.push(x.clone());
    }
    Ok(ClosedLoopTrace {
        seed,
        steps: trace,
        states,
    })
}

/// Summary of many closed-loop runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSummary {
    pub runs: usize,
    pub steps: usize,
    /// Fraction of runs whose state satisfies the monitor at steps `1..=steps`.
    pub monitor_rates: Vec<f64>,
    pub infeasible_steps: usize,
    pub capped_steps: usize,
    pub mean_cost: f64,
}

impl ClosedLoopSummary {
    pub fn min_rate(&self) -> Option<f64> {
        self.monitor_rates.iter().copied().reduce(f64::min)
    }
}

/// Runs seeds `base_seed .. base_seed + runs` and tallies the monitor at every step.
pub fn run_many(
    p: &MpcProblem,
    base_seed: u64,
    runs: usize,
    steps: usize,
    monitor: Option<&ChancePredicate>,
    mut on_trace: impl FnMut(&ClosedLoopTrace),
) -> Result<ClosedLoopSummary, EncodeError> {
    let mut hits = vec![0usize; steps];
    let mut infeasible = 0;
    let mut capped = 0;
    let mut cost = 0.0;
    for r in 0..runs {
        let trace = run_receding_horizon(p, base_seed.wrapping_add(r as u64), steps)?;
        for s in &trace.steps {
            match s.status {
                PlanStatus::Infeasible => infeasible += 1,
                PlanStatus::CapExceeded => capped += 1,
                _ => {}
            }
        }
        cost += trace
            .steps
            .iter()
            .map(|s| p.objective_value(&s.state, &s.input))
            .sum::<f64>();
        if let Some(m) = monitor {
            for t in 1..=steps {
                let x = &trace.states[t];
                let u = DVector::zeros(p.system.nu);
                if m.mu.eval(x.as_slice(), u.as_slice(), 0.0) <= 0.0 {
                    hits[t - 1] += 1;
                }
            }
        }
        on_trace(&trace);
    }
    Ok(ClosedLoopSummary {
        runs,
        steps,
        monitor_rates: if monitor.is_some() {
            hits.iter().map(|h| *h as f64 / runs.max(1) as f64).collect()
        } else {
            Vec::new()
        },
        infeasible_steps: infeasible,
        capped_steps: capped,
        mean_cost: cost / runs.max(1) as f64,
    })
}

impl MpcProblem {
    /// Realized stage cost of one applied step.
    pub fn objective_value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let lin = self.objective.linear.eval(x.as_slice(), u.as_slice(), 0.0);
        let abs: f64 = self
            .objective
            .abs_terms
            .iter()
            .map(|(w, e)| w * e.eval(x.as_slice(), u.as_slice(), 0.0).abs())
            .sum();
        lin + abs
    }
}
