//! Numerical core for estimation, imputation and recovery with missing data.
//!
//! Everything here operates on [`IncompleteMatrix`]: a `p x n` matrix whose
//! rows are variables and whose columns are samples (or time steps), paired
//! with a binary mask marking the observed entries. Indices are zero-based.
//!
//! The crate is `no_std` (it needs `alloc`). Randomized routines take an
//! explicit [`SeedSpec`]; there is no ambient RNG.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod data;
mod error;
pub mod linalg;
mod metrics;
mod rng;
pub mod special;

pub mod completion;
pub mod em;
pub mod graph;
pub mod imputation;
pub mod mechanisms;
pub mod mnar;
pub mod optim;
pub mod structcov;
pub mod subspace;
pub mod timeseries;

pub use data::{ColumnSplit, IncompleteMatrix, Mask};
pub use error::{Error, Result};
pub use metrics::{rmse_missing, sep};
pub use rng::{GapRng, SeedSpec};

pub use nalgebra::{DMatrix, DVector};
