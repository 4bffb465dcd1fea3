//! Character-level GPT language models with classical, quantum-inspired and
//! simulated-quantum self-attention.

pub mod attention;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod quantum;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
