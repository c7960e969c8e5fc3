//! Least favorable additive noise: how much of a discrete signal survives
//! `E[X | X + Y]` when the noise `Y` has a second-moment budget.

pub mod cli;
pub mod condexp;
pub mod dist;
pub mod error;
pub mod mc;
pub mod numeric;
pub mod quad;
pub mod solve;
pub mod verify;

pub use dist::{AtomicDistribution, DensityNoise, Noise, NoiseBudget, SignalSpec};
pub use error::{Error, Result};
