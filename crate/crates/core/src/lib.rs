#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Galerkin-truncated nonlinear Schrödinger equation on the torus with a
//! random block-constant potential: Birkhoff normal forms, small-divisor
//! diagnostics, Lie flows and a split-step spectral simulator.

pub mod birkhoff;
pub mod error;
pub mod lattice;
pub mod lieflow;
pub mod polyalg;
pub mod potential;
pub mod resonance;
pub mod scalar;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
