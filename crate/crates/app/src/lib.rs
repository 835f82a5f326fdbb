//! Entry points for the Bayes factor surface toolkit: the `bfsurf` command
//! line and the `/v1` HTTP JSON service.
//!
//! Both front ends translate their input into the request types in
//! [`schema`] and call the functions in [`artifacts`], which own all
//! serialization. A CLI export and the matching API result are therefore
//! the same bytes. Sweeps and surrogate fits run as content-addressed jobs
//! ([`jobs`]) on one bounded worker pool.

pub mod artifacts;
pub mod cli;
pub mod error;
pub mod http;
pub mod jobs;
pub mod schema;

pub use error::{AppError, Result};
