//! Stochastic assume-guarantee contracts over bounded StSTL.
//!
//! Formulas over chance predicates are encoded as mixed-integer programs whose feasible sets
//! inner-approximate or outer-approximate the satisfying inputs of a stochastic linear
//! system. Contract checks and receding-horizon control are built on those encodings.

pub mod chance;
pub mod contracts;
pub mod encoder;
pub mod error;
pub mod formula;
pub mod models;
pub mod montecarlo;
pub mod mpc;
pub mod parser;
pub mod runner;

pub use error::{EncodeError, FormulaError, ModelError, ParseError};
