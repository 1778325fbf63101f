use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("trace has {have} steps, formula needs {need}")]
    TraceTooShort { have: usize, need: usize },
    #[error("trace row has {have} atoms, formula needs {need}")]
    TraceWidth { have: usize, need: usize },
    #[error("interval [{lo},{hi}] is reversed")]
    ReversedInterval { lo: u32, hi: u32 },
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityRange(f64),
    #[error("non-finite coefficient in predicate")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },
    #[error("matrix `{0}` is not symmetric")]
    Asymmetric(String),
    #[error("matrix `{what}` is indefinite (eigenvalue {eigenvalue})")]
    Indefinite { what: String, eigenvalue: f64 },
    #[error("`{what}` is not a probability distribution")]
    NotStochastic { what: String },
    #[error("probability {0} must lie strictly between 0 and 1")]
    ProbabilityEndpoint(f64),
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Milp(#[from] stostl_milp::MilpError),
    #[error("horizon {have} is shorter than the formula needs ({need})")]
    HorizonTooShort { have: usize, need: usize },
    #[error("{count} scenarios exceed the cap of {cap}; use a shorter horizon or raise the cap")]
    ScenarioCap { count: usize, cap: usize },
    #[error("unsupported predicate `{pred}`: {reason}")]
    Unsupported { pred: String, reason: String },
    #[error("explicit probability {0} must lie strictly between 0 and 1")]
    ProbabilityEndpoint(f64),
}
