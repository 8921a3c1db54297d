//! Numerical laboratory for the open Volterra lattice.
//!
//! The lattice is implemented as a direct ODE, as a Lax equation and as a
//! double-bracket gradient flow of `f(L) = tr(K L²)` on the isospectral set of
//! zero-diagonal tridiagonal matrices, together with the normal metric that
//! makes the last form a Riemannian gradient flow.

pub mod geometry;
pub mod integrate;
pub mod lattice;
pub mod linalg;
pub mod rng;

pub use lattice::{FlowForm, LatticeState, LaxMatrix, Sign, CALIBRATED_SIGN};
pub use linalg::{DenseMatrix, EigenDecomposition};
