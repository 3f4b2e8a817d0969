pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
