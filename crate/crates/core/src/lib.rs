pub mod artifact;
pub mod error;
pub mod geom;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod sampling;
pub mod schedule;
pub mod training;
pub mod world;

pub use error::{Error, Result};
