//! Visuomotor reaching lab.
//!
//! A six-axis arm, a camera on a sphere, and an A3C agent that learns to
//! reach a red cube from 64×64 RGB frames. The robustness bench sweeps the
//! camera over a grid of poses and reports accuracy heat maps.

pub mod bench;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod kinematics;
pub mod net;
pub mod render;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
