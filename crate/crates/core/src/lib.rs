pub mod decision;
pub mod design;
pub mod effects;
pub mod error;
pub mod gibbs;
pub mod model;
pub mod pg;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
