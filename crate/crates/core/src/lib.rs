//! Multiscale renormalization-group toolkit for interacting Weyl semimetals on
//! a tight-binding lattice.

pub mod cli;
pub mod cutoff;
pub mod error;
pub mod fourier;
pub mod grassmann;
pub mod lattice_model;
pub mod multiscale;
pub mod propagator;
pub mod rg_flow;
pub mod spinor;
pub mod trees;

pub use error::{Error, Result};
