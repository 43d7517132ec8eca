use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid is disconnected: node {node} is unreachable from node 0")]
    Disconnected { node: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("nonpositive voltage magnitude {value} at node {node}")]
    NonPositiveVoltage { node: usize, value: f64 },

    #[error("case file {path}: {message}")]
    CaseParse { path: String, message: String },

    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("power flow did not converge after {iterations} iterations (residual {residual:e})")]
    PowerFlowDiverged { iterations: usize, residual: f64 },

    #[error("power flow singular")]
    PowerFlowSingular,

    #[error("transfer matrix evaluated at a pole (s = {s})")]
    Pole { s: Complex64 },

    #[error("singular machine/inverter mapping: {0}")]
    SingularMapping(String),

    #[error("invalid node model: {0}")]
    InvalidModel(String),

    #[error("edge phase condition violated on ({from}, {to}): |dphi| = {diff}")]
    EdgePhase { from: usize, to: usize, diff: f64 },

    #[error("alpha decomposition infeasible at node {node}: alpha = {alpha}, bound = {alpha_theory}")]
    AlphaInfeasible {
        node: usize,
        alpha: f64,
        alpha_theory: f64,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (residual {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("bisection bracket [{lo}, {hi}] does not straddle a verdict change")]
    Bracket { lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PowerFlowDiverged { .. }
                | Error::PowerFlowSingular
                | Error::Pole { .. }
                | Error::SingularMapping(_)
                | Error::InternalConsistency(_)
                | Error::Bracket { .. }
        )
    }
}
