// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod loss;
pub mod nn;
pub mod par;
pub mod sweep;
pub mod symbolic;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
