//! Sliced-Wasserstein discrepancies between distributions of symmetric
//! positive definite matrices.

pub mod adaptation;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod sampling;
pub mod ot;
pub mod sliced;

pub use error::{Error, Result};
pub use linalg::{SpdMatrix, SymMatrix};
pub use sampling::{build_projection_basis, ProjectionBasis, RngState, SamplerKind};
pub use sliced::{hspdsw, log_sw, spdsw, sym_sw, DiscrepancyReport, EmpiricalSpdMeasure, Estimator};
