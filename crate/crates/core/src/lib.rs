//! Episode-based cross-attention network for zero-shot recognition of
//! attribute-object compositions.

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod par;
pub mod training;

pub use error::{Error, Result};
