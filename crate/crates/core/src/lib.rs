//! Oriented object detection with the gliding-vertex representation.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod nms;
pub mod pipeline;
pub mod representation;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
