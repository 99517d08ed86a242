pub mod bench;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod ive;
pub mod pipeline;
pub mod rng;
pub mod smoothing;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
