//! Fully discrete minimizing-movement (JKO) schemes on regular grids.
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod jko;
pub mod lattice;
pub mod measure;
pub mod oracle;
pub mod transport;

pub use energy::{EnergySpec, InternalDensityKind, NodePotential, PotentialField};
pub use error::{Error, Result};
pub use jko::{run_trajectory, JkoConfig, SolverKind, StepResult, Trajectory};
pub use lattice::LatticeSpec;
pub use measure::DiscreteMeasure;
pub use transport::{solve_ot, DualPotentials, TransportPlan};
