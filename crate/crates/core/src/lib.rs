//! Steady Poisson-Nernst-Planck flux model for a single channel with adaptive meshing.

// NaN must fail positivity and ordering checks, hence `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod banded;
pub mod error;
pub mod fem;
pub mod mmpde;
pub mod model;
pub mod par;
pub mod quadrature;
pub mod scan;
pub mod stiff;

pub use error::{PnpError, Result};
