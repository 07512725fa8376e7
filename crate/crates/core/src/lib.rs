// NaN must fail the positivity checks, which `!(x > 0.0)` does on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod datasets;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod solver;
pub mod splines;
pub mod tensor;

pub use error::{Error, Result};
