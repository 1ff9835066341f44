//! Sparse optimal control of the spectral fractional Laplacian.
//!
//! The fractional state equation `L^s u = z` on `Ω` is realized through its
//! degenerate elliptic extension to the cylinder `Ω × (0, Y)` with weight
//! `y^α`, `α = 1 - 2s`. The extension is discretized with tensor-product
//! bilinear elements on a mesh that is graded towards `y = 0`, controls are
//! piecewise constant, and the optimality system (state, adjoint, clipped
//! soft-thresholding) is iterated with a proximal gradient loop.
//!
//! An extension-free spectral solver for `Ω = (0, L)` serves as an
//! independent oracle, and [`harness`] drives refinement studies against it.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod harness;
pub mod linsolve;
pub mod mesh;
pub mod optimizer;
pub mod problem;
pub mod spectral;

pub use error::{Error, Result};
