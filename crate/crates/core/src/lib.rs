//! Semiclassical band projection for slow-fast quantum systems.
//!
//! The crate evaluates the corrected classical model of an isolated band
//! (effective Hamiltonian `h = e₀ + εe₁ + εM`, Berry curvature Ω, Liouville
//! density), integrates its flow, and compares it against an exact grid
//! quantization to measure convergence orders in ε.

pub mod band;
pub mod bloch;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod flow;
pub mod identities;
pub mod linalg;
pub mod models;
pub mod observables;
pub mod ode;
pub mod quantum;
pub mod run;
pub mod symbols;

pub use error::{Error, Result};
