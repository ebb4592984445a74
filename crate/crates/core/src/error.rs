use thiserror::Error;

use crate::expr::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expression error: {0}")]
    Parse(#[from] ParseError),

    #[error("invalid discretization: {0}")]
    Discretization(String),

    #[error("non-regular parametrization: zero velocity at node {index}")]
    NonRegular { index: usize },

    #[error("degenerate image speed at node {index}")]
    DegenerateSpeed { index: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value {value} from `{what}` at node {index}")]
    NonFinite {
        what: String,
        index: usize,
        value: f64,
    },

    #[error("derivative `{name}` disagrees with finite differences at {at:?} (supplied {supplied}, estimated {estimated})")]
    DerivativeMismatch {
        name: String,
        at: [f64; 4],
        supplied: f64,
        estimated: f64,
    },

    #[error("numerically singular system (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("finite-difference grid too short: need {needed} points, have {have}")]
    GridTooShort { needed: usize, have: usize },

    #[error("oracle mode {mode} system is singular")]
    OracleSingular { mode: usize },
}
