pub mod cli;
pub mod config;
pub mod error;
pub mod extrapolation;
pub mod fields;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod poisson;
pub mod recombination;
pub mod stepper;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
