//! Frame-to-tatum automatic drum transcription.

pub mod arrays;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod features;
pub mod heatmap;
pub mod langmodel;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod posenc;
pub mod score;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod transcriber;

pub use error::{Error, Result};
