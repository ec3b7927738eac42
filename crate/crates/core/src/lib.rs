pub mod cli;
pub mod dataset;
pub mod env;
pub mod error;
pub mod model;
pub mod numerics;
pub mod offline;
pub mod online;
pub mod rng;

pub use error::{MadtError, Result};
