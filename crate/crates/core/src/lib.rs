//! Spectral analysis of Wigner-type random matrices with general variance
//! profiles: the vector self-consistent equation for the resolvent, density
//! of states and support geometry, matrix ensemble sampling, and statistical
//! verification of local laws, rigidity, delocalization, and gap statistics.

pub mod dos;
pub mod envelope;
pub mod error;
pub mod linalg;
pub mod profile;
pub mod sampler;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use profile::{AssumptionReport, KernelSpec, ProfileKind, ProfileParams, VarianceProfile};
pub use solver::{EtaSweep, QveSolution, SolverConfig, SpectralPoint, StabilityOperator};
