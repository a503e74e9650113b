//! Numerical core of an anchor-free rotated object detector.

pub mod angle;
pub mod assign;
pub mod dota;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod postprocess;
pub mod reference;
pub mod rep;
pub mod selfcheck;

pub use error::{Error, Result};
