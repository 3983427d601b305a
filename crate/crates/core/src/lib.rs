//! Nearest-neighbor ratio imputation for survey detail items, with smoothed
//! variance estimation and a Monte Carlo evaluation harness.

pub mod design;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod imputation;
pub mod io;
pub mod popgen;
pub mod response;
pub mod rng;
pub mod sim;
pub mod smooth;
pub mod stats;
pub mod variance;

pub use error::{Error, Result};
pub use exec::Execution;
