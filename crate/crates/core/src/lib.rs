//! Core library for dating analog family-album photos and classifying their
//! socio-historical context.

pub mod catalog;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod imageio;
pub mod models;
pub mod nn;
pub mod regions;
pub mod synthetic;
pub mod training;

pub use error::{CoreError, Result};
