//! Variational solver for the logarithmic Schrödinger equation
//! `-Delta u + V(x) u = u log u^2` on a truncated box.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
mod linalg;
pub mod multiplicity;
mod peak;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
