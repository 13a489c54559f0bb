//! Spectral-Galerkin simulation of the stochastic Cahn–Hilliard equation with
//! multiplicative trace-class noise, using an exponential Euler scheme with a
//! stochastic scalar auxiliary variable (SAV).

pub mod cli;
pub mod config;
pub mod error;
pub mod forcing;
pub mod harness;
pub mod reference;
pub mod selftest;
pub mod spectral;
pub mod stepper;

pub use error::{Error, Result};
