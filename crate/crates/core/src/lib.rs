//! Band-gap computation for two-dimensional periodic dielectric media via
//! a quadratic eigenvalue problem in the Bloch quasimomentum.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod cli;
pub mod config;
pub mod error;
pub mod lu;
pub mod material;
pub mod mesh;
pub mod output;
pub mod qep;
pub mod sparse;
pub mod sweep;

pub use error::{Error, Result};
