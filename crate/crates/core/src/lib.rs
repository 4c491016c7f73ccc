pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dywpe;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tensor};
