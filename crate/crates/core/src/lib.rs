//! Sparse, safe frequency regulation for inverter-intensive microgrids.
//!
//! The pipeline: assemble the linearized swing model ([`netmodel`]), design a
//! sparse H2 feedback gain with reweighted-ℓ1 ADMM ([`sparse`]), filter the
//! nominal control through robust barrier-function bounds ([`safety`]) and
//! simulate the sampled closed loop ([`sim`]).

pub mod error;
pub mod kernels;
pub mod netmodel;
pub mod safety;
pub mod sim;
pub mod sparse;
pub mod units;

pub use error::{Error, Result};
