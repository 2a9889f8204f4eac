//! One-dimensional blood flow on vessel networks.
//!
//! Each vessel carries pressure `P` and flow `Q` on a uniform grid over
//! `x in [0, 1]`. Interior nodes are advanced by a semi-Lagrangian method of
//! characteristics; vessel ends are closed at external boundaries, branching
//! junctions and lumped transitional (arteriole-capillary-venule) nodes. The
//! quasilinear problem is solved per time level by a fixed-point iteration
//! on frozen coefficients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod cli;
pub mod constitutive;
pub mod error;
pub mod io;
pub mod junctions;
pub mod network;
pub mod solver;
pub mod verification;
pub mod wellposedness;

pub use error::{SimError, SimResult};
