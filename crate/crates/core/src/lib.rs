//! Numerical core for the defocusing radial nonlinear Schrödinger equation on
//! the exterior of a Schwarzschild black hole, written in the tortoise
//! coordinate.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod scattering;
pub mod solver;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{Grid, SchwarzschildParams};
pub use solver::{evolve, EvolutionConfig, Mode, Stepper};
pub use state::{GaussianSpec, ModelParams, WaveFunction};
