//! Boundary-aware semantic segmentation of aerial rasters.

pub mod error;
pub mod labels;
pub mod boundary;
pub mod graph;
pub mod raster;
pub mod tensor;
pub mod train;
pub mod tiling;
pub mod metrics;
pub mod io;
pub mod synth;
pub mod config;
pub mod cli;
pub mod experiment;

pub use error::{Error, Result};
pub use labels::LabelMap;
pub use tensor::{Mode, Shape, Tensor};
