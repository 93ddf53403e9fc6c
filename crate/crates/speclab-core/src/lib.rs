//! Spectral laboratory for one-dimensional Schrödinger operators `H = p² + V`.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: periodic grid, states, inner products and Fourier multipliers.
//! * [`potentials`]: closed-form potential families and the smooth cutoff.
//! * [`operators`]: Hamiltonians, conjugate operators, commutators, weights.
//! * [`spectral`]: eigensolvers, embedded-eigenvalue detection, weighted resolvents.
//! * [`diagnostics`]: decay fits, commutator probes, virial and regularity checks.
//! * [`hscalc`]: almost-analytic extensions and the Helffer–Sjöstrand calculus.
//!
//! Data-parallel loops go through [`par`], which falls back to sequential
//! execution when the `parallel` feature is disabled.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod hscalc;
pub mod linalg;
pub mod operators;
pub mod par;
pub mod potentials;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{inner, Grid, ScalarField, StateVector};
pub use num_complex::Complex64 as C64;
