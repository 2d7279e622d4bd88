//! Adaptive timestepping for the Euler-Maruyama discretisation of SDEs whose
//! drift is only locally Lipschitz. Step sizes respond to the current state
//! through a pluggable strategy; whenever the controller hits its lower bound
//! the update switches to a tamed map, which keeps moments bounded where the
//! plain explicit scheme can diverge.
//!
//! The crate bundles the scheme itself ([`stepping`]), a registry of test
//! problems ([`models`]), reproducible Brownian paths with bridge queries
//! ([`brownian`]), the measurement drivers used to study the scheme
//! ([`experiments`], [`mlmc`], [`spde`]) and plain CSV/JSON reporting
//! ([`report`]).

pub mod brownian;
pub mod error;
pub mod experiments;
pub mod mlmc;
pub mod models;
pub mod report;
pub mod rng;
pub mod spde;
pub mod stepping;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
