//! Bayes factor surfaces: marginal likelihoods and log Bayes factors as
//! functions of prior hyperparameters, designs over hyperparameter boxes,
//! parallel surface sweeps and GP surrogates of the resulting surfaces.

// `!(x > 0.0)` guards deliberately reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Dense linear algebra reads better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod design;
pub mod error;
pub mod hlm_bf;
pub mod numerics;
pub mod reg_bf;
pub mod rng;
pub mod surface;
pub mod surrogate;

pub use error::{Error, Result};
