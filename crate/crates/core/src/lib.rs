pub mod combiner;
pub mod data;
pub mod error;
pub mod model;
pub mod netsync;
pub mod orchestrator;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
