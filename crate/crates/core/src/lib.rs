//! Simulation of multi-particle generalized Langevin dynamics with singular
//! repulsion and exponential-sum memory kernels.
//!
//! The memory kernel `K_i(t) = sum_l lambda_{i,l}^2 exp(-alpha_{i,l} t)` is
//! embedded with one Ornstein-Uhlenbeck variable per mode, giving the Markov
//! system on positions, velocities and auxiliary variables that the integrators
//! in [`dynamics`] advance.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod lyapunov;
pub mod model;
pub mod noise;
pub mod parallel;
pub mod potentials;
pub mod vector;

pub use error::{Error, Result};
pub use parallel::Execution;
