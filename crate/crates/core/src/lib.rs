//! Penalized sieve estimation of structural models.
//!
//! A structural model pins down observables through an equilibrium condition
//! `p = Psi(p, theta)`. Instead of solving that condition for every trial `theta`,
//! the equilibrium object is approximated by a cubic sieve `p^beta` and the
//! estimator maximizes `loglik(beta, theta) - omega * penalty(beta, theta)`, where the
//! penalty measures how far `p^beta` is from satisfying the equilibrium condition.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod models;
pub mod numopt;
pub mod pse;
pub mod sieve;

pub use error::{PseError, Result};
