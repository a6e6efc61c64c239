//! Multi-range attention transformer for single-image super-resolution.
//!
//! The crate is layered bottom-up: a small NCHW [`Tensor`] with
//! hand-written adjoints ([`ops`], [`graph`]), neighborhood attention
//! primitives ([`attention`]), network blocks ([`blocks`]) and the full
//! model ([`model`]), plus training, evaluation and cost analysis.

pub mod analysis;
pub mod attention;
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use model::{MatModel, ModelConfig};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};
