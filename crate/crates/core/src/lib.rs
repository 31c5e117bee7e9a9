//! Neural-network quantum state tomography.
//!
//! The pipeline takes measurement frequencies from a product-structured POVM,
//! feeds them through a small three-layer network whose output is packed into
//! a transition matrix, maps that matrix to a physical density matrix with one
//! of several positivity-enforcing strategies, and minimizes the negative
//! log-likelihood of the observed data with Rprop.
//!
//! Modules:
//! - [`states`]: density matrices, benchmark state families, noise, fidelities.
//! - [`measurement`]: tetrahedral POVM, fast product-POVM contraction, sampling.
//! - [`mapping`]: parameter vector to density matrix strategies and their adjoints.
//! - [`tomonet`]: network, loss, gradients, Rprop and the training loop.
//! - [`baselines`]: iterative maximum-likelihood (RρR) reconstruction.
//! - [`harness`]: experiment grids, records and reports.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mapping;
pub mod measurement;
pub mod states;
pub mod tomonet;

pub use error::{Result, TomoError};
pub use linalg::{CMatrix, C64};
