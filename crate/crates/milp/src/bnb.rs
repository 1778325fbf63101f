//! LP-based branch-and-bound over the binary variables of a [`MipModel`].

use std::time::{Duration, Instant};

use crate::model::{MipModel, ObjSense, VarKind};
use crate::simplex::{solve_lp, DenseLp, LpSolution, LpStatus};
use crate::MilpError;

/// Tolerance on row satisfaction for a reported assignment. Kept well below the `1e-6`
/// margins that encode strict inequalities.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Distance from {0, 1} under which a binary counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Relative optimality gap at which an incumbent is declared optimal.
pub const RELATIVE_GAP: f64 = 1e-6;
const REORDER_EVERY: usize = 64;

/// Node and wall-clock limits for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_nodes: usize,
    pub max_seconds: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_nodes: 200_000,
            max_seconds: 120.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    /// An assignment satisfying every row. For models with an objective it is optimal
    /// within [`RELATIVE_GAP`]; for pure feasibility models it is the first one found.
    Feasible { values: Vec<f64>, objective: f64 },
    Infeasible,
    /// The node or time budget ran out before the search finished. Carries the best
    /// assignment seen so far, if any.
    CapExceeded { incumbent: Option<(Vec<f64>, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, SolveStatus::Feasible { .. })
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self.status, SolveStatus::Infeasible)
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.status {
            SolveStatus::Feasible { values, .. } => Some(values),
            _ => None,
        }
    }
}

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
    bound: f64,
}

fn build_lp(model: &MipModel) -> DenseLp {
    let n = model.vars().len();
    let m = model.rows().len();
    let mut a = vec![0.0; m * n];
    let mut b = Vec::with_capacity(m);
    let mut sense = Vec::with_capacity(m);
    for (i, row) in model.rows().iter().enumerate() {
        for &(v, c) in &row.coeffs {
            a[i * n + v.0] += c;
        }
        b.push(row.rhs);
        sense.push(row.sense);
    }
    let mut cost = vec![0.0; n];
    if let Some(obj) = model.objective() {
        let sign = match obj.sense {
            ObjSense::Minimize => 1.0,
            ObjSense::Maximize => -1.0,
        };
        for &(v, c) in &obj.expr.terms {
            cost[v.0] += sign * c;
        }
    }
    DenseLp {
        m,
        n,
        a,
        b,
        sense,
        cost,
    }
}

/// Solves `model` by branch-and-bound.
///
/// Branching picks the most fractional binary (ties to the lowest index) and explores the
/// child nearer to the LP value first. The open list is depth-first and is re-sorted by
/// LP bound every 64 nodes. Identical inputs give identical outputs unless the time
/// limit interrupts the search.
pub fn solve(model: &MipModel, budget: &Budget) -> Result<SolveResult, MilpError> {
    let start = Instant::now();
    for v in model.vars() {
        if !(v.lower.is_finite() && v.upper.is_finite()) {
            return Err(MilpError::UnboundedVariable {
                name: v.name.clone(),
            });
        }
    }
    let lp = build_lp(model);
    let binaries: Vec<usize> = model
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| i)
        .collect();
    let has_objective = model.objective().is_some();
    let obj_sign = match model.objective().map(|o| o.sense) {
        Some(ObjSense::Maximize) => -1.0,
        _ => 1.0,
    };
    let obj_const = model.objective().map(|o| o.expr.constant).unwrap_or(0.0);

    let mut stats = SolveStats::default();
    let mut incumbent: Option<(Vec<f64>, f64)> = None; // internal (minimized) objective
    let mut open = vec![Node {
        lower: model.vars().iter().map(|v| v.lower).collect(),
        upper: model.vars().iter().map(|v| v.upper).collect(),
        bound: f64::NEG_INFINITY,
    }];
    let mut since_reorder = 0usize;

    let finish = |status: SolveStatus, mut stats: SolveStats| {
        stats.wall_time = start.elapsed();
        Ok(SolveResult { status, stats })
    };
    let external = |inc: &Option<(Vec<f64>, f64)>| {
        inc.as_ref()
            .map(|(x, f)| (x.clone(), obj_sign * f + obj_const))
    };

    while let Some(node) = open.pop() {
        if let Some((_, best)) = &incumbent {
            if node.bound >= *best - RELATIVE_GAP * best.abs().max(1.0) {
                continue;
            }
        }
        if stats.nodes >= budget.max_nodes
            || start.elapsed().as_secs_f64() > budget.max_seconds
        {
            let incumbent = external(&incumbent);
            return finish(SolveStatus::CapExceeded { incumbent }, stats);
        }
        stats.nodes += 1;
        let sol = solve_lp(&lp, &node.lower, &node.upper);
        stats.lp_iterations += sol.iterations;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => return Err(MilpError::Unbounded),
            LpStatus::IterationLimit => return Err(MilpError::IterationLimit),
        }
        if let Some((_, best)) = &incumbent {
            if sol.objective >= *best - RELATIVE_GAP * best.abs().max(1.0) {
                continue;
            }
        }

        let mut branch: Option<(usize, f64)> = None;
        let mut best_frac = INTEGRALITY_TOL;
        for &j in &binaries {
            let v = sol.x[j];
            let frac = (v - v.round()).abs();
            if frac > best_frac + 1e-12 {
                best_frac = frac;
                branch = Some((j, v));
            }
        }

        match branch {
            None => {
                let Some(candidate) = polish(&lp, &node, &binaries, &sol, model, &mut stats) else {
                    continue;
                };
                let better = incumbent
                    .as_ref()
                    .is_none_or(|(_, best)| candidate.1 < *best);
                if better {
                    incumbent = Some(candidate);
                }
                if !has_objective {
                    let incumbent = external(&incumbent);
                    let (values, objective) = incumbent.expect("incumbent just set");
                    return finish(SolveStatus::Feasible { values, objective }, stats);
                }
            }
            Some((j, v)) => {
                let mut down = Node {
                    lower: node.lower.clone(),
                    upper: node.upper.clone(),
                    bound: sol.objective,
                };
                down.upper[j] = 0.0;
                let mut up = Node {
                    lower: node.lower,
                    upper: node.upper,
                    bound: sol.objective,
                };
                up.lower[j] = 1.0;
                if v >= 0.5 {
                    open.push(down);
                    open.push(up);
                } else {
                    open.push(up);
                    open.push(down);
                }
            }
        }

        since_reorder += 1;
        if has_objective && since_reorder >= REORDER_EVERY {
            since_reorder = 0;
            // Best bound ends up on top of the stack; stable sort keeps DFS order on ties.
            open.sort_by(|a, b| b.bound.total_cmp(&a.bound));
        }
    }

    match external(&incumbent) {
        Some((values, objective)) => finish(SolveStatus::Feasible { values, objective }, stats),
        None => finish(SolveStatus::Infeasible, stats),
    }
}

/// Re-solves with binaries fixed to their rounded values so the continuous part is
/// consistent with exact 0/1 indicators, then checks every row.
fn polish(
    lp: &DenseLp,
    node: &Node,
    binaries: &[usize],
    sol: &LpSolution,
    model: &MipModel,
    stats: &mut SolveStats,
) -> Option<(Vec<f64>, f64)> {
    let mut lower = node.lower.clone();
    let mut upper = node.upper.clone();
    for &j in binaries {
        let r = sol.x[j].round().clamp(0.0, 1.0);
        lower[j] = r;
        upper[j] = r;
    }
    let fixed = solve_lp(lp, &lower, &upper);
    stats.lp_iterations += fixed.iterations;
    if fixed.status != LpStatus::Optimal {
        return None;
    }
    let (viol, _) = model.max_violation(&fixed.x);
    if viol > FEASIBILITY_TOL {
        return None;
    }
    Some((fixed.x, fixed.objective))
}
