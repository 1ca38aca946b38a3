//! Simulation and inference for meta-analytic regression of surrogate
//! endpoints in two-arm cancer screening trials.
//!
//! Trials are described by stage-at-diagnosis and death-given-stage
//! probabilities ([`model`]). Outcome counts are simulated with seeded,
//! platform-stable streams ([`sampling`]), and the plug-in estimates of
//! late-stage incidence reduction `S` and mortality reduction `M` are
//! regressed across trials ([`inference`]). [`asymptotics`] gives the
//! delta-method covariance of `(S_hat, M_hat)` and the positivity
//! certificate for its off-diagonal term; [`regions`] turns it into Wald
//! ellipses. [`experiments`] ties these together into the simulation
//! designs and the summary-data workflow.

pub mod asymptotics;
pub mod error;
pub mod experiments;
pub mod format;
pub mod inference;
pub mod model;
pub mod par;
pub mod regions;
pub mod sampling;

pub use error::{Denominator, Error, Result};
pub use par::Execution;
