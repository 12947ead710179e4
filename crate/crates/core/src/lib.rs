pub mod bench;
pub mod curricular;
pub mod degrade;
pub mod embfile;
mod error;
pub mod image;
pub mod kernel;
pub mod resample;
pub mod retrieval;
pub mod rng;
pub mod split;

pub use error::{Error, Result};
