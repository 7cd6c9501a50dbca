//! High-order space-time finite elements for dynamic optimal transport, mean-field
//! planning and mean-field games, solved with the ALG2 augmented-Lagrangian iteration.
//!
//! The potential `φ` lives in a continuous Lobatto-Lagrange space of degree `k+1` on a
//! structured space-time grid; the dual variables live at the `(k+1)^(d+1)` Gauss points
//! of each cell, so the nonlinear step is pointwise.

// Negated comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod alg2;
pub mod assembly;
pub mod costs;
pub mod error;
pub mod fespace;
pub mod io;
pub mod mesh;
pub mod quad;
pub mod solver;

pub use error::{Error, Result};
