pub mod cograph;
pub mod community;
pub mod error;
pub mod geo;
pub mod heatmap;
pub mod ingest;
pub mod lexicon;
pub mod pipeline;
pub mod profile;
pub mod spatialstats;
pub mod synth;

pub use error::{Error, Result};
