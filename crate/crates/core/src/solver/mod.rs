//! Full-space implicit Euler stepping by Newton minimization.

pub mod linear;
pub mod newton;
pub mod simulate;

use thiserror::Error;

use crate::energy::EnergyError;

pub use linear::{FreeDofs, LinearSolver};
pub use newton::{newton_minimize, DirichletSet, IncrementalPotential, NewtonStats, Objective, SolverConfig};
pub use simulate::{simulate, BoundaryMotion, RigidMotion, SimulationOutput, StaticBoundary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("line search found no decrease at frame {frame}")]
    LineSearchFailure { frame: usize },
    #[error("invalid Dirichlet set: {0}")]
    InvalidDirichlet(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<SolverError>,
    },
}
