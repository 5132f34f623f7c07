//! Extractive question-answering reader over spliced multi-document
//! evidence, trained with a cross-evidence loss and regularized by
//! adversarial perturbations injected at named intermediate variables.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod objective;
pub mod reader;

pub use autodiff::{Grads, Tape, Tensor, VarId};
pub use error::{Result, SrqaError};
