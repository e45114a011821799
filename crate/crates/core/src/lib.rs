//! Balanced data assimilation for stiff mechanical systems.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balancing;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod integrators;
pub mod linalg;
pub mod models;
pub mod stability;

pub use error::{Error, Result};
pub use models::StateVector;
