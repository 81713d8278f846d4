//! shellflow: a numerical laboratory for stochastic GOY/Sabra shell models.
//!
//! The crate integrates the dissipative complex SDE
//! du = [-νAu + B(u,u)] dt + Q dW on a Galerkin truncation, runs the
//! tangent, Malliavin and controlled flows along each path, and provides
//! Monte Carlo probes for the statistical properties of the dynamics:
//! energy balance, exponential moments, average boundedness, concentration,
//! equicontinuity of the semigroup, and convergence of Cesàro occupation
//! measures. A separate finite-state module verifies the abstract stability
//! criterion (e-property + average boundedness + concentration ⇒ unique
//! invariant measure) by exact matrix arithmetic on small chains.

pub mod config;
pub mod experiment;
pub mod functional;
pub mod integrate;
pub mod markov;
pub mod measure;
pub mod noise;
pub mod probes;
pub mod report;
pub mod rng;
pub mod shell;
pub mod tangent;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("truncation mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("integrator blow-up at t = {t}: |u| = {norm}")]
    BlowUp { t: f64, norm: f64 },
    #[error("non-finite amplitude at mode {mode}, t = {t}")]
    NonFinite { mode: usize, t: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}
