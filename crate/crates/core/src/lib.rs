//! Class-prevalence estimation (quantification).

// `!(x >= lo)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params_io;
pub mod pipeline;
pub mod quanet;
pub mod quantifiers;
pub mod tensor;

pub use error::{Error, Result};
