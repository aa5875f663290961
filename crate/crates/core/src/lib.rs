//! Differentially private federated stochastic convex optimization with
//! anytime averaging and corrected-momentum gradient estimates.
//!
//! Machines hold private datasets and run a STORM-style recursion on
//! importance-weighted estimates `q_t`; a parameter server averages the
//! messages and takes projected online gradient steps. Gaussian noise is added
//! either by every machine (untrusted server) or once by the server (trusted
//! server), and the [`privacy`] module accounts for it in Renyi DP.

mod error;
pub mod estimator;
pub mod federated;
pub mod geometry;
pub mod linalg;
pub mod privacy;
pub mod problems;
pub mod record;
pub mod seed;
pub mod verify;

pub use error::{Error, Result};
