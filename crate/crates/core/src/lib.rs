//! Multi-class spurious-feature simulation: a Gaussian feature model,
//! output-space and weight-space ensembles of linear classifiers, exact and
//! Monte-Carlo OOD accuracy, and a colored-MNIST pipeline with a small MLP.

mod container;
pub mod colormnist;
pub mod ensembles;
pub mod error;
pub mod evaluation;
pub mod generative;
pub mod models;
pub mod numerics;
pub mod theory;

pub use error::{Error, Result};
