//! Distributionally robust Kalman filtering with noise-centric Wasserstein
//! ambiguity sets.
//!
//! The library computes least-favorable noise covariances from small dense
//! semidefinite programs, runs the resulting time-varying and constant-gain
//! robust filters, certifies contraction rates of the robust Riccati
//! iteration, and drives seeded Monte-Carlo experiments.

pub mod psd;
pub(crate) mod riccati;
pub mod sdp;
pub mod filters;

pub use filters::{AmbiguityRadii, SystemModel};
pub use psd::SymMatrix;
