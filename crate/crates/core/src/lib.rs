//! Non-neural machinery for CT field-of-view extension experiments.

pub mod bcstats;
pub mod error;
pub mod extent;
pub mod fovsim;
pub mod inpaint;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod raster;

pub use error::{Error, Result};

/// Working HU window. Slices are clamped to it before simulation.
pub const HU_WINDOW: (f64, f64) = (-150.0, 150.0);

/// Working raster dimension (square).
pub const WORKING_DIM: usize = 256;
