//! Reference-free forward-looking sonar enhancement.

pub mod config;
pub mod desk;
pub mod error;
pub mod fusenet;
pub mod geometry;
pub mod image;
pub mod features;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod resample;
pub mod scatter;
pub mod selftest;
pub mod sonarsim;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
pub use tensor::{ChannelLabel, FeatureTensor};
