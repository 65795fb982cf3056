pub mod analysis;
pub mod assembly;
pub mod commands;
pub mod config;
pub mod error;
pub mod kernel;
pub mod mesh;
pub mod quadrature;
pub mod stepper;
pub mod study;

pub use error::{Error, Result};
