//! Porous-medium tumour growth with drift and its incompressible limit.

pub mod error;
pub mod grid;
pub mod model;
pub mod pme;
pub mod diagnostics;
pub mod hele_shaw;
pub mod sweep;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
