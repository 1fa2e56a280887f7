use thiserror::Error;

use crate::grid::BusId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown bus {0}")]
    UnknownBus(BusId),

    #[error("bus {0} has no path to a source")]
    NoPath(BusId),

    #[error("infeasible beta parameters: mean {mean}, sd {sd}, support {support_max}")]
    InfeasibleBeta {
        mean: f64,
        sd: f64,
        support_max: f64,
    },

    #[error("filter design out of domain: {0}")]
    FilterDomain(String),

    #[error("invalid harmonic order {0}")]
    HarmonicOrder(f64),

    #[error("power flow diverged after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    Divergence { iterations: usize, mismatch: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("unpaired monte carlo runs: {0}")]
    Unpaired(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
