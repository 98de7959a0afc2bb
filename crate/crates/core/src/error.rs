use thiserror::Error;

use crate::flow::FlowTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A background descriptor could not be turned into a connected graph.
    #[error("invalid background parameter `{param}`: {reason}")]
    Construction { param: &'static str, reason: String },

    #[error("conformal factor must be strictly positive and finite (vertex {vertex}, value {value})")]
    Domain { vertex: usize, value: f64 },

    #[error("field length {got} does not match vertex count {expected}")]
    Shape { expected: usize, got: usize },

    #[error("inconsistent operator descriptor: {0}")]
    Descriptor(String),

    #[error("eigensolver stopped after {applications} operator applications with residual {residual:.3e}")]
    NoConvergence { applications: usize, residual: f64 },

    #[error("dense oracle is limited to {limit} unknowns, got {got}")]
    SizeGuard { limit: usize, got: usize },

    /// An RK4 stage produced a nonpositive conformal factor.
    #[error("positivity lost at t = {t} with step {dt:.3e}")]
    Positivity { t: f64, dt: f64 },

    /// Repeated step halving fell below the underflow threshold.
    #[error("time step underflow at t = {t} (dt = {dt:.3e})")]
    Stiffness { t: f64, dt: f64, trace: Box<FlowTrace> },

    #[error("{0}")]
    Usage(String),

    #[error("Newton iteration stagnated after {iterations} steps with residual {residual:.3e}")]
    Newton { iterations: usize, residual: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Solver-side failures, as opposed to bad input.
    pub fn is_solver_error(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::Positivity { .. }
                | Error::Stiffness { .. }
                | Error::Newton { .. }
        )
    }
}
