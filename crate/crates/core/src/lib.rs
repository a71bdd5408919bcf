//! Open-set model attribution at desk scale: a task classifier with a
//! DCT front end, progressively trained lightweight augmentation models
//! that simulate the open space, frequency-spectrum analysis tools, an
//! evaluation kit with rejection metrics, and a fully synthetic
//! trace-stamp benchmark.

pub mod bench;
pub mod error;
pub mod evalkit;
pub mod image;
pub mod losses;
pub mod models;
pub mod nn;
pub mod spectrum;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
pub use image::ImageTensor;
