//! Joint dictionary-parameter learning and sparse recovery for off-grid line
//! spectral estimation by a generalized iterative reweighted ℓ2 method.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mmv;
pub mod oracle;
pub mod signal;
pub mod solver;
mod system;

pub use error::{Error, Result};
pub use signal::{Frequency, SpectralInstance};
pub use solver::{Estimate, PruneMode, SolverConfig, SolverState, WeightMatrix};
