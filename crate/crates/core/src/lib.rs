//! Deep inside-outside recursive autoencoders.

pub mod error;
pub mod eval;
pub mod infer;
pub mod chart;
pub mod checkpoint;
pub mod compose;
pub mod data;
pub mod model;
pub mod numeric;
pub mod objective;
pub mod parser;
pub mod trainer;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
