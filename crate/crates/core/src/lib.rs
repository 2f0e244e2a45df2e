//! Adversarial mixture-model laboratory: hierarchical and flat mixtures of
//! linear generators, multi-generator GAN baselines, a reverse-mode autodiff
//! engine able to differentiate its own gradients, and the evaluation
//! toolkit used to compare them on low-dimensional synthetic data.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod interpret;
pub mod losses;
pub mod models;
pub mod nn;
pub mod optim;
pub mod par;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
