//! Pain intensity classification from faces with an action-unit graph.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod facs;
pub mod model;
pub mod scalar;
pub mod seeding;
pub mod training;

pub use checkpoint::Checkpoint;
pub use error::{Error, ErrorKind, Result};
