//! Monotonicity-based imaging of nonlinear inclusions from boundary power products.

pub mod error;
pub mod excitation;
pub mod geometry;
pub mod imaging;
pub mod forward;
pub mod materials;
pub mod oracle;

pub use error::{Error, Result};
