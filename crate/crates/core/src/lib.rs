//! Lattice random walks killed by random per-site visit budgets and
//! conditioned to reach a high level.
//!
//! The crate covers the walk and its environment ([`walk`]), the
//! separating-level block structure ([`levels`]), exact enumeration of the
//! coefficient tables ([`oracle`]), the decay constants ([`cramer`]), the
//! regenerative core process built from tilted block laws ([`core_process`]),
//! Monte Carlo estimators ([`monte_carlo`]) and configuration/presets
//! ([`config`], [`io`]).

pub mod core_process;
pub mod config;
pub mod cramer;
pub mod error;
pub mod interval;
pub mod io;
pub mod levels;
pub mod monte_carlo;
pub mod oracle;
pub mod prob;
pub mod rng;
pub mod walk;

pub use error::{Error, Result};
pub use interval::Interval;
