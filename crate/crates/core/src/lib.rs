pub mod cli;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod selftest;
pub mod service;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
