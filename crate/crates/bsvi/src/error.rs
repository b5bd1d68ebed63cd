//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by solver, measure, and validation code.
#[derive(Debug, Error)]
pub enum BsviError {
    #[error("non-finite input in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid value in {context}: {detail}")]
    Invalid { context: String, detail: String },

    #[error("tree enumeration of {count} nodes exceeds the cap of {cap}")]
    NodeCap { count: u128, cap: usize },

    #[error("combined atom count {count} exceeds the transport cap of {cap}; coarsen the measures")]
    AtomCap { count: usize, cap: usize },

    #[error("weights must be nonnegative and sum to 1 (got sum {sum})")]
    WeightSum { sum: f64 },

    #[error("misaligned ensembles: {left} atoms vs {right}")]
    Misaligned { left: usize, right: usize },

    #[error("point is infeasible: barrier value is infinite at {context}")]
    InfeasiblePoint { context: String },

    #[error("terminal data infeasible: barrier value infinite at terminal node {node}")]
    InfiniteTerminalBarrier { node: usize },

    #[error("generator returned a non-finite value at t={t}, |y|={y_norm}, |z|={z_norm}")]
    GeneratorEval { t: f64, y_norm: f64, z_norm: f64 },

    #[error("inner penalization step did not converge within {max_iter} iterations (residual {residual})")]
    InnerNoConvergence { residual: f64, max_iter: usize },

    #[error("measure-flow iteration did not converge within {max_iter} iterations (last residual {last})")]
    PicardNoConvergence {
        last: f64,
        max_iter: usize,
        history: Vec<f64>,
    },

    #[error("configuration rejected: {0}")]
    ConfigValidation(String),

    #[error("configuration is not in a supported baseline family: {0}")]
    UnsupportedBaseline(String),

    #[error("unknown experiment {0}")]
    UnknownExperiment(String),

    #[error("step-size guard: {0}")]
    StepSizeGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BsviError>;
