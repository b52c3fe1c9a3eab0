//! Classical emulation of a read-in / evolve / read-out pipeline for
//! elastic-network protein dynamics.

// `!(x > 0.0)` is the NaN-rejecting guard used throughout; index loops mirror
// the matrix formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod circuit;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod kp_tree;
pub mod linalg;
pub mod network_model;
pub mod observables;
pub mod state_prep;
pub mod structure_io;

pub use error::{Error, Result};
