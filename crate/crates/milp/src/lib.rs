//! A small mixed-integer linear programming core.
//!
//! Models are built with [`MipModel`], solved with [`solve`] (LP-based branch-and-bound
//! on top of a dense bounded simplex) and can be written out in CPLEX LP text format
//! with [`export_lp`] for cross-checking against external solvers.

mod bnb;
mod lp_format;
mod model;
mod simplex;

pub use bnb::{
    solve, Budget, SolveResult, SolveStats, SolveStatus, FEASIBILITY_TOL, INTEGRALITY_TOL,
    RELATIVE_GAP,
};
pub use lp_format::export_lp;
pub use model::{
    AffineExpr, BigMEntry, MipModel, ObjSense, Objective, Row, RowId, Sense, VarId, VarKind,
    Variable,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MilpError {
    #[error("variable `{name}` has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("row `{row}` references unknown variable index {index}")]
    UnknownVariable { row: String, index: usize },
    #[error("row `{row}` has a non-finite coefficient or right-hand side")]
    NonFinite { row: String },
    #[error("indicator row `{row}` needs a finite positive M, got {m}")]
    InvalidBigM { row: String, m: f64 },
    #[error("variable index {index} is not binary")]
    NotBinary { index: usize },
    #[error("variable `{name}` needs finite bounds before solving")]
    UnboundedVariable { name: String },
    #[error("LP relaxation is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}
