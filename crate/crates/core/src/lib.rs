//! Attention-based knowledge tracing: a separated encoder/decoder model over
//! exercise and response sequences, three alternative stackings, and the
//! tooling to train and evaluate them on interaction logs.

pub mod attention;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod interaction;
pub mod model;
pub mod numerics;
pub mod params;
pub mod training;

pub use error::{Error, Result};
