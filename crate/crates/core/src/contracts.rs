//! Assume-guarantee contracts and their three-valued checks.
//!
//! Each check asks whether some formula is satisfiable. A feasible inner encoding proves
//! satisfiability and an infeasible outer encoding proves the opposite; when neither
//! happens the norm bounds are refined along a ladder of segment counts.

use std::time::Duration;

use stostl_milp::{export_lp, solve, Budget, MipModel, SolveStatus, VarKind};

use crate::chance::{ApproxLevel, ApproxMode, DEFAULT_SCENARIO_CAP};
use crate::encoder::{encode, EncodeOptions, Encoding};
use crate::error::EncodeError;
use crate::formula::Formula;
use crate::models::SystemModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Contract {
    pub name: String,
    pub system: String,
    pub assume: Formula,
    pub guarantee: Formula,
    /// The guarantee already has the form `!assume || guarantee`.
    pub canonical: bool,
}

impl Contract {
    pub fn new(name: impl Into<String>, system: impl Into<String>, assume: Formula, guarantee: Formula) -> Self {
        Self {
            name: name.into(),
            system: system.into(),
            assume,
            guarantee,
            canonical: false,
        }
    }

    /// Replaces the guarantee by `!assume || guarantee`; idempotent.
    pub fn canonicalize(&self) -> Contract {
        if self.canonical {
            return self.clone();
        }
        Contract {
            guarantee: Formula::or(Formula::not(self.assume.clone()), self.guarantee.clone()),
            canonical: true,
            ..self.clone()
        }
    }

    pub fn horizon(&self) -> u32 {
        self.assume.horizon().max(self.guarantee.horizon())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Holds,
    Fails,
    Unknown,
}

impl Outcome {
    pub fn keyword(&self) -> &'static str {
        match self {
            Outcome::Holds => "holds",
            Outcome::Fails => "fails",
            Outcome::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Holds => "Holds",
            Outcome::Fails => "Fails",
            Outcome::Unknown => "Unknown",
        })
    }
}

/// Satisfying point of an inner encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    /// Which query produced it.
    pub query: String,
    /// Full decision vector `[x_0; u_0; ...]`.
    pub decision: Vec<f64>,
    pub x0: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    /// Values of the binary variables by name.
    pub binaries: Vec<(String, f64)>,
}

/// One solver call of a check.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub query: String,
    pub level: ApproxLevel,
    pub status: QueryStatus,
    pub variables: usize,
    pub binaries: usize,
    pub rows: usize,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_time: Duration,
    /// LP-format text of the model, kept when requested.
    pub lp: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryStatus {
    Feasible,
    Infeasible,
    CapExceeded,
}

impl QueryStatus {
    pub fn keyword(&self) -> &'static str {
        match self {
            QueryStatus::Feasible => "feasible",
            QueryStatus::Infeasible => "infeasible",
            QueryStatus::CapExceeded => "cap_exceeded",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub outcome: Outcome,
    pub witness: Option<Witness>,
    /// Level at which the outcome was decided, or the last one tried.
    pub level: Option<ApproxLevel>,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone)]
pub struct CheckConfig {
    /// Segment counts tried in order.
    pub ladder: Vec<u32>,
    pub budget: Budget,
    /// Input steps in the decision vector; defaults to the largest formula horizon plus one.
    pub steps: Option<usize>,
    pub scenario_cap: usize,
    pub keep_lp: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            ladder: vec![1, 2, 4, 8],
            budget: Budget::default(),
            steps: None,
            scenario_cap: DEFAULT_SCENARIO_CAP,
            keep_lp: false,
        }
    }
}

struct Query {
    status: QueryStatus,
    witness: Option<Witness>,
    tightenable: bool,
}

fn witness(query: &str, enc: &Encoding, values: &[f64], sys: &SystemModel) -> Witness {
    let d = enc.decision_values(values, sys);
    let nx = enc.layout.nx;
    let nu = enc.layout.nu;
    let inputs = (0..enc.layout.steps)
        .map(|t| d[nx + t * nu..nx + (t + 1) * nu].to_vec())
        .collect();
    let binaries = enc
        .model
        .vars()
        .iter()
        .zip(values)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(v, x)| (v.name.clone(), x.round()))
        .collect();
    Witness {
        query: query.into(),
        x0: d[..nx].to_vec(),
        decision: d,
        inputs,
        binaries,
    }
}

fn run_query(
    sys: &SystemModel,
    name: &str,
    formula: &Formula,
    level: ApproxLevel,
    steps: usize,
    cfg: &CheckConfig,
    attempts: &mut Vec<Attempt>,
) -> Result<Query, EncodeError> {
    let opts = EncodeOptions {
        level,
        steps: Some(steps),
        scenario_cap: cfg.scenario_cap,
    };
    let enc = encode(sys, formula, &opts)?;
    let model: &MipModel = &enc.model;
    let res = solve(model, &cfg.budget)?;
    let (status, values) = match &res.status {
        SolveStatus::Feasible { values, .. } => (QueryStatus::Feasible, Some(values.clone())),
        SolveStatus::Infeasible => (QueryStatus::Infeasible, None),
        // a capped search that found an incumbent still certifies feasibility
        SolveStatus::CapExceeded { incumbent: Some((v, _)) } => (QueryStatus::Feasible, Some(v.clone())),
        SolveStatus::CapExceeded { incumbent: None } => (QueryStatus::CapExceeded, None),
    };
    attempts.push(Attempt {
        query: name.into(),
        level,
        status,
        variables: model.vars().len(),
        binaries: model.num_binaries(),
        rows: model.rows().len(),
        nodes: res.stats.nodes,
        lp_iterations: res.stats.lp_iterations,
        wall_time: res.stats.wall_time,
        lp: cfg.keep_lp.then(|| export_lp(model)),
    });
    Ok(Query {
        status,
        witness: values.map(|v| witness(name, &enc, &v, sys)),
        tightenable: enc.norm_literals > 0,
    })
}

fn steps_for(cfg: &CheckConfig, formulas: &[&Formula]) -> usize {
    let need = formulas.iter().map(|f| f.horizon()).max().unwrap_or(0) as usize + 1;
    cfg.steps.map_or(need, |s| s.max(need))
}

/// Three-valued satisfiability of `formula` over `sys`.
pub fn check_satisfiable(sys: &SystemModel, name: &str, formula: &Formula, cfg: &CheckConfig) -> Result<Verdict, EncodeError> {
    let steps = steps_for(cfg, &[formula]);
    let mut attempts = Vec::new();
    let mut last = None;
    for &s in &cfg.ladder {
        let under = ApproxLevel::under(s);
        let q = run_query(sys, name, formula, under, steps, cfg, &mut attempts)?;
        if q.status == QueryStatus::Feasible {
            return Ok(Verdict {
                outcome: Outcome::Holds,
                witness: q.witness,
                level: Some(under),
                attempts,
            });
        }
        let capped = q.status == QueryStatus::CapExceeded;
        let over = ApproxLevel::over(s);
        last = Some(over);
        let r = run_query(sys, name, formula, over, steps, cfg, &mut attempts)?;
        if r.status == QueryStatus::Infeasible {
            return Ok(Verdict {
                outcome: Outcome::Fails,
                witness: None,
                level: Some(over),
                attempts,
            });
        }
        if capped || r.status == QueryStatus::CapExceeded || !(q.tightenable || r.tightenable) {
            break;
        }
    }
    Ok(Verdict {
        outcome: Outcome::Unknown,
        witness: None,
        level: last,
        attempts,
    })
}

/// Compatibility: the assumption is satisfiable.
pub fn check_compatibility(sys: &SystemModel, c: &Contract, cfg: &CheckConfig) -> Result<Verdict, EncodeError> {
    check_satisfiable(sys, "assume", &c.assume, cfg)
}

/// Consistency: the canonical guarantee is satisfiable.
pub fn check_consistency(sys: &SystemModel, c: &Contract, cfg: &CheckConfig) -> Result<Verdict, EncodeError> {
    let c = c.canonicalize();
    check_satisfiable(sys, "guarantee", &c.guarantee, cfg)
}

/// The two formulas whose validity establishes that `refined` refines `refines`.
pub fn refinement_obligations(refined: &Contract, refines: &Contract) -> [Formula; 2] {
    let c1 = refined.canonicalize();
    let c2 = refines.canonicalize();
    let psi1 = Formula::or(Formula::not(c2.assume.clone()), c1.assume.clone());
    let psi2 = Formula::or(
        Formula::and(c1.assume.clone(), Formula::not(c1.guarantee.clone())),
        Formula::or(Formula::not(c2.assume.clone()), c2.guarantee.clone()),
    );
    [psi1, psi2]
}

/// Refinement `refined <= refines`: holds when both obligations are valid, i.e. their
/// negations have infeasible outer encodings; fails when a negation has a feasible inner one.
pub fn check_refinement(sys: &SystemModel, refined: &Contract, refines: &Contract, cfg: &CheckConfig) -> Result<Verdict, EncodeError> {
    if refined.system != refines.system {
        return Err(EncodeError::Unsupported {
            pred: format!("{} / {}", refined.name, refines.name),
            reason: "refinement needs both contracts over the same system".into(),
        });
    }
    let negs = refinement_obligations(refined, refines).map(Formula::not);
    let names = ["not_psi1", "not_psi2"];
    let steps = steps_for(cfg, &[&negs[0], &negs[1]]);
    let mut attempts = Vec::new();
    let mut proven = [false, false];
    let mut last = None;
    for &s in &cfg.ladder {
        let mut tightenable = false;
        let mut capped = false;
        for i in 0..2 {
            if proven[i] {
                continue;
            }
            let under = ApproxLevel::under(s);
            let q = run_query(sys, names[i], &negs[i], under, steps, cfg, &mut attempts)?;
            if q.status == QueryStatus::Feasible {
                return Ok(Verdict {
                    outcome: Outcome::Fails,
                    witness: q.witness,
                    level: Some(under),
                    attempts,
                });
            }
            let over = ApproxLevel::over(s);
            last = Some(over);
            let r = run_query(sys, names[i], &negs[i], over, steps, cfg, &mut attempts)?;
            match r.status {
                QueryStatus::Infeasible => proven[i] = true,
                QueryStatus::CapExceeded => capped = true,
                QueryStatus::Feasible => {}
            }
            capped |= q.status == QueryStatus::CapExceeded;
            tightenable |= q.tightenable || r.tightenable;
        }
        if proven.iter().all(|p| *p) {
            return Ok(Verdict {
                outcome: Outcome::Holds,
                witness: None,
                level: last,
                attempts,
            });
        }
        if capped || !tightenable {
            break;
        }
    }
    Ok(Verdict {
        outcome: Outcome::Unknown,
        witness: None,
        level: last,
        attempts,
    })
}

/// Mode name used in reports.
pub fn mode_keyword(mode: ApproxMode) -> &'static str {
    match mode {
        ApproxMode::Exact => "exact",
        ApproxMode::Under => "under",
        ApproxMode::Over => "over",
    }
}
