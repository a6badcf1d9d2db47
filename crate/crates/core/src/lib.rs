pub mod adaptation;
pub mod autodiff;
pub mod data;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod gradcheck;
pub mod harness;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
