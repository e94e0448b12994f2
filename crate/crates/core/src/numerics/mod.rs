//! Dense tensors, reverse-mode differentiation, seeded randomness and weight
//! initialisation.

pub mod gradcheck;
mod graph;
mod init;
pub(crate) mod kernels;
mod rng;
mod tensor;

pub use graph::{sigmoid, Graph, Var};
pub use init::{xavier_bound, xavier_uniform};
pub use rng::RngStream;
pub use tensor::Tensor;
