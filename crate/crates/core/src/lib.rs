pub mod datagen;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod trainer;

pub use error::{Error, Result};
