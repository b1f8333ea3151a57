pub mod cli;
pub mod data;
pub mod disentangle;
pub mod error;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod spectral;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
