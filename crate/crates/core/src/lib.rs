//! Primal-dual policy learning on the Bellman Lagrangian.
//!
//! The tabular layers ([`mdp`], [`duality`], [`tabular_pd`]) solve small MDPs
//! exactly and act as the reference for the parameterized agents in
//! [`agents`], which train small tanh networks ([`neural`]) on the
//! environments in [`envs`]. [`harness`] runs seeded multi-trial experiments
//! and reduces them to solve statistics.

pub mod agents;
pub mod duality;
pub mod envs;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod mdp;
pub mod neural;
pub mod tabular_pd;

pub use error::{Error, Result};
