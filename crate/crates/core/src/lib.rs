//! Spatio-temporal video classifiers on a small, self-contained tensor core.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
