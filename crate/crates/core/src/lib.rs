pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod noisy_linalg;
pub mod profiler;
pub mod qfd;
pub mod qram;
pub mod rng;
pub mod sfa;
mod snapshot;

pub use error::{Error, Result};
