//! Selective rationalization: an extractor picks a subset of the input, a
//! predictor classifies from that subset alone, and the extractor is trained
//! with cross-entropy, a representation-norm objective, or both.

pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod oracles;
pub mod rationalization;
pub mod tensor;

pub use error::{Error, Result};
