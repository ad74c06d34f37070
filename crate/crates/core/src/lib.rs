// `!(x > y)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapters;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod numerics;
pub mod pseudolabel;
pub mod rng;
pub mod store;
pub mod synthetic;
pub mod zeroshot;

pub use error::{Error, FormatError, Result};
