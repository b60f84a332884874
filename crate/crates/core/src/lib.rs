//! Continuous-time portfolio selection in factor-diffusion markets.
//!
//! The crate covers the market model and its simulation ([`market`]), the
//! closed-form Hamiltonian maximizer ([`quad_opt`]), mutual-fund directions
//! ([`funds`]), an explicit finite-difference Bellman solver ([`hjb`]),
//! Monte Carlo policy evaluation ([`policy_eval`]) and scenario files
//! ([`scenario`]).

pub mod error;
pub mod funds;
pub mod hjb;
pub mod market;
pub mod policy_eval;
pub mod quad_opt;
pub mod scenario;

pub use error::{Error, Result};
