pub mod alloc;
pub mod data;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod similarity;
pub mod synthetic;
pub mod theory;

pub use error::{Error, Result};
