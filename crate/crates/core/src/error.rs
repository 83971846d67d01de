use thiserror::Error;

/// Errors raised by the lattice, transport and JKO solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("node index {index} out of range (lattice has {len} nodes)")]
    InvalidNode { index: usize, len: usize },
    #[error("point {0:?} lies outside the lattice box")]
    OutsideBox(Vec<f64>),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("measures live on different lattices")]
    LatticeMismatch,
    #[error("invalid energy specification: {0}")]
    InvalidEnergy(String),
    #[error("gradient undefined: {0}")]
    UndefinedGradient(String),
    #[error("transport problem infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mass drift {0:e} exceeds abort threshold")]
    MassDrift(f64),
    #[error("oracle limits exceeded: {0}")]
    OracleLimit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
