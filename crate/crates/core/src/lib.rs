pub mod error;
pub mod filters;
pub mod harness;
pub mod manifold;
pub mod pairs;
pub mod rng;
pub mod scene;
pub mod signal;

pub use error::{Error, Result};
