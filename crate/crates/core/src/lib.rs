//! Spectral-Galerkin simulation of semilinear wave-type equations with
//! fading memory, time-varying delayed feedback and a power-law source.

pub mod config;
pub mod delay;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod kernels;
pub mod memory;
pub mod pipeline;
mod quad;
pub mod spectral;

pub use error::{Error, Result};
