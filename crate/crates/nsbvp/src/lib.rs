//! Boundary value problems for first-order elliptic operators whose adapted
//! boundary operator is not selfadjoint, realized on Fourier truncations.
pub mod cylinder;
pub mod discretize;
pub mod error;
pub mod examples;
pub mod fredpair;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sobolev;
pub mod speccalc;
pub mod subspace;
pub mod symbols;

pub use error::{Error, Result};
